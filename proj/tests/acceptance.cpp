// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `compose_acceptance 1 2 11`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "app/checks.hpp"
#include "app/commands.hpp"
#include "app/config.hpp"
#include "app/experiments.hpp"
#include "compose/gradient_lab.hpp"
#include "compose/matchers.hpp"
#include "compose/numeric.hpp"
#include "compose/slot_attention.hpp"

namespace fs = std::filesystem;
using namespace compose;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

// Folds the check list into one outcome; the detail lists every check value.
Outcome from_checks(const std::vector<app::CheckResult>& checks) {
  Outcome o{true, ""};
  for (const auto& c : checks) {
    o.pass = o.pass && c.pass;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += c.name + "=" + num(c.value) + (c.pass ? "" : " (FAIL)");
  }
  return o;
}

std::uint64_t seed_for(std::uint64_t stream) { return Rng(1).fork(stream).seed(); }

Outcome holistic_rank_one() { return from_checks(app::check_holistic(100, seed_for(1)).checks); }

Outcome chamfer_rank_k() { return from_checks(app::check_chamfer_construction().checks); }

Outcome sinkhorn_limits() {
  return from_checks(app::check_sinkhorn_limits(20, {1.0, 0.3, 0.1, 0.03, 0.01, 100.0}, seed_for(2)).checks);
}

Outcome spectral_floor() { return from_checks(app::check_spectral_floor(1000, seed_for(3)).checks); }

Outcome ce_symmetries() { return from_checks(app::check_ce_symmetries(20, seed_for(4)).checks); }

Outcome cc_rebase() { return from_checks(app::check_cc_rebase(20, seed_for(5)).checks); }

Outcome encoder_oracle() {
  const auto section = app::check_encoder_fd(50, seed_for(6));
  Outcome o = from_checks(section.checks);
  o.detail += "; cases=" + std::to_string(app::encoder_fd_cases().size());
  return o;
}

struct SeedRuns {
  app::EvalReport compose, compose_ct, lambda0;
  double s_compose = 0.0, s_ct = 0.0;
};

// Trains the three variants once per seed; criteria 8-10 share the runs and
// the first of them pays for the training time.
const std::vector<SeedRuns>& trend_runs() {
  static std::vector<SeedRuns> runs = [] {
    std::vector<SeedRuns> out;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      app::ExperimentConfig base;
      base.seed = seed;
      SeedRuns r;
      for (app::Variant v : {app::Variant::compose, app::Variant::compose_ct, app::Variant::no_decorrelation}) {
        const app::ExperimentConfig cfg = app::variant_config(base, v);
        const app::TrainedRun run = app::train(cfg);
        const app::EvalReport report = app::evaluate(cfg, run.bench, run.training.params);
        if (v == app::Variant::no_decorrelation) {
          r.lambda0 = report;
          continue;
        }
        const double s =
            app::variant_alignment(cfg, run.bench, run.training.params, v, cfg.gradlab.alignment_episodes).mean_s;
        (v == app::Variant::compose ? r.compose : r.compose_ct) = report;
        (v == app::Variant::compose ? r.s_compose : r.s_ct) = s;
      }
      std::printf("  seed %llu  S compose %.4f ct %.4f | noc %.4f / %.4f / %.4f | sys %.4f / %.4f / %.4f"
                  "  (compose / compose_ct / lambda0)\n",
                  static_cast<unsigned long long>(seed), r.s_compose, r.s_ct, app::split(r.compose, "noc").accuracy,
                  app::split(r.compose_ct, "noc").accuracy, app::split(r.lambda0, "noc").accuracy,
                  app::split(r.compose, "sys").accuracy, app::split(r.compose_ct, "sys").accuracy,
                  app::split(r.lambda0, "sys").accuracy);
      std::fflush(stdout);
      out.push_back(r);
    }
    return out;
  }();
  return runs;
}

Outcome alignment_trend() {
  Outcome o{true, ""};
  for (const auto& r : trend_runs()) {
    const bool ok = r.s_compose > r.s_ct;
    o.pass = o.pass && ok;
    o.detail += (o.detail.empty() ? "" : "; ") + num(r.s_compose) + " vs " + num(r.s_ct) + (ok ? "" : " (FAIL)");
  }
  return o;
}

Outcome tradeoff_trend() {
  Outcome o{true, ""};
  for (const auto& r : trend_runs()) {
    const double noc_c = app::split(r.compose, "noc").accuracy, noc_t = app::split(r.compose_ct, "noc").accuracy;
    const double sys_c = app::split(r.compose, "sys").accuracy, sys_t = app::split(r.compose_ct, "sys").accuracy;
    const bool ok = noc_c >= noc_t && sys_t >= sys_c;
    o.pass = o.pass && ok;
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("noc ") + num(noc_c) + ">=" + num(noc_t) + " sys " +
                num(sys_t) + ">=" + num(sys_c) + (ok ? "" : " (FAIL)");
  }
  return o;
}

Outcome lambda_trend() {
  Outcome o{true, ""};
  for (const auto& r : trend_runs()) {
    const double with = app::split(r.compose, "noc").accuracy, without = app::split(r.lambda0, "noc").accuracy;
    const bool ok = with > without;
    o.pass = o.pass && ok;
    o.detail += (o.detail.empty() ? "" : "; ") + num(with) + " > " + num(without) + (ok ? "" : " (FAIL)");
  }
  return o;
}

Matrix unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) m.set_row(i, random_unit_vector(d, rng));
  return m;
}

Outcome matcher_coherence() {
  Rng rng(seed_for(7));
  double chamfer_gap = 0.0, row_dev = 0.0;
  std::size_t hungarian_bad = 0, hungarian_cases = 0;
  const match::MatcherKind kinds[] = {match::MatcherKind::hard_chamfer, match::MatcherKind::soft_chamfer,
                                      match::MatcherKind::sinkhorn, match::MatcherKind::hungarian,
                                      match::MatcherKind::mutual_nn};
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 1 + rng.uniform_index(7), d = 2 + rng.uniform_index(15);
    const Matrix zq = unit_rows(k, d, rng), zc = unit_rows(k, d, rng);
    const Matrix s = match::cost_matrix(zq, zc);
    for (auto kind : kinds) {
      match::MatcherConfig cfg;
      cfg.kind = kind;
      const Matrix tm = match::make_coupling(cfg, s).t;
      for (std::size_t i = 0; i < tm.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < tm.cols(); ++j) sum += tm(i, j);
        row_dev = std::max(row_dev, std::abs(sum - 1.0));
      }
      if (kind == match::MatcherKind::hard_chamfer)
        chamfer_gap = std::max(chamfer_gap, std::abs(match::assignment_score(tm, s) - match::forward_chamfer(zq, zc)));
    }
  }
  for (std::size_t k = 1; k <= 6; ++k) {
    for (int t = 0; t < 50; ++t) {
      Matrix s(k, k);
      for (double& x : s.data()) x = rng.uniform(-1.0, 1.0);
      const std::vector<std::size_t> perm = match::hungarian_assignment(s);
      std::vector<std::size_t> p(k);
      for (std::size_t i = 0; i < k; ++i) p[i] = i;
      double best = -INFINITY;
      do {
        double v = 0.0;
        for (std::size_t i = 0; i < k; ++i) v += s(i, p[i]);
        best = std::max(best, v);
      } while (std::next_permutation(p.begin(), p.end()));
      std::set<std::size_t> cols(perm.begin(), perm.end());
      double got = 0.0;
      for (std::size_t i = 0; i < k; ++i) got += s(i, perm[i]);
      ++hungarian_cases;
      if (perm.size() != k || cols.size() != k || *cols.rbegin() >= k || std::abs(got - best) > 1e-12) ++hungarian_bad;
    }
  }
  const bool pass = chamfer_gap <= 1e-12 && row_dev <= 1e-9 && hungarian_bad == 0;
  return {pass, "chamfer_gap=" + num(chamfer_gap) + "; row_dev=" + num(row_dev) + "; hungarian_mismatch=" +
                    std::to_string(hungarian_bad) + "/" + std::to_string(hungarian_cases)};
}

Outcome purity_semantics() {
  using slot::slot_purity;
  struct Case {
    std::vector<Matrix> attn;
    std::vector<std::vector<int>> labels;
    double expect;
  };
  const std::vector<Case> cases = {
      // one-hot: each slot owns one category
      {{Matrix{{1, 1, 0, 0}, {0, 0, 1, 1}}}, {{1, 1, 2, 2}}, 1.0},
      // exact half split contributes nothing
      {{Matrix{{0.5, 0.5}}}, {{1, 2}}, 0.0},
      // mixed: 0.8 majority counts, 0.5 does not
      {{Matrix{{0.1, 0.5, 0.3, 0.1}, {0.3, 0.1, 0.1, 0.5}}}, {{0, 1, 1, 2}}, 0.5},
      // mixed: background majority still counts, an exact half does not
      {{Matrix{{0.4, 0.4, 0.1, 0.1, 0.0}, {0.1, 0.1, 0.2, 0.3, 0.3}, {0.05, 0.05, 0.3, 0.3, 0.3}}},
       {{1, 1, 2, 2, 0}},
       2.0 / 3.0},
      // mixed batch with unnormalized rows: image scores 1 and 1/2
      {{Matrix{{0.7, 0.3}, {0.45, 0.55}}, Matrix{{0.4, 0.8, 0.8}, {1.2, 0.4, 0.4}}}, {{1, 2}, {0, 1, 2}}, 0.75},
  };
  Outcome o{true, ""};
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const double rho = slot_purity(cases[i].attn, cases[i].labels);
    const bool ok = std::abs(rho - cases[i].expect) <= 1e-15;
    o.pass = o.pass && ok;
    o.detail += (i ? "; " : "") + num(rho) + (ok ? "" : " != " + num(cases[i].expect));
  }
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "compose_acceptance_determinism";
  fs::remove_all(root);
  for (const char* run : {"a", "b"}) {
    app::CommandOptions o;
    o.out_dir = (root / run).string();
    if (app::cmd_train(o) != 0 || app::cmd_eval(o) != 0) return {false, "command failed"};
  }
  std::size_t compared = 0, differ = 0;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    if (entry.path().extension() != ".csv") continue;
    ++compared;
    if (slurp(entry.path()) != slurp(root / "b" / entry.path().filename())) ++differ;
  }
  fs::remove_all(root);
  return {compared > 0 && differ == 0,
          std::to_string(compared) + " csv files compared, " + std::to_string(differ) + " differ"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "holistic_rank_one", 10, holistic_rank_one},
      {2, "chamfer_rank_k_exactness", 1, chamfer_rank_k},
      {3, "sinkhorn_limits", 5, sinkhorn_limits},
      {4, "spectral_floor", 10, spectral_floor},
      {5, "ce_symmetries", 5, ce_symmetries},
      {6, "cc_feasibility_rebase", 5, cc_rebase},
      {7, "full_encoder_gradient_oracle", 60, encoder_oracle},
      {8, "alignment_trend", 600, alignment_trend},
      {9, "noc_sys_tradeoff_trend", 1800, tradeoff_trend},
      {10, "lambda_d_ablation_trend", 1800, lambda_trend},
      {11, "matcher_family_coherence", 30, matcher_coherence},
      {12, "purity_boundary_semantics", 1, purity_semantics},
      {13, "determinism", 300, determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_seconds;
    const bool pass = o.pass && in_budget;
    if (!pass) ++failed;
    std::printf("%s criterion %2d %-30s %s [%.2fs, budget %.0fs%s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.budget_seconds, in_budget ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
