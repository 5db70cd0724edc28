#include "app/checks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "app/csv.hpp"
#include "app/experiments.hpp"
#include "compose/gradient_lab.hpp"
#include "compose/numeric.hpp"

namespace app {

using compose::Matrix;
using compose::Rng;
using compose::Vector;
namespace enc = compose::enc;
namespace lab = compose::lab;

namespace {

CheckResult at_most(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, value <= threshold};
}
CheckResult at_least(std::string name, double value, double threshold) {
  return {std::move(name), value, threshold, value >= threshold};
}

Matrix random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) m.set_row(i, compose::random_unit_vector(d, rng));
  return m;
}

double block_error(std::span<const double> analytic, std::span<const double> fd) {
  return compose::relative_error(analytic, fd, 1e-8);
}

}  // namespace

compose::Episode random_episode(std::size_t d, std::size_t k, std::size_t way, std::size_t shot, std::size_t queries,
                                Rng& rng) {
  compose::Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.queries_per_class = queries;
  for (std::size_t c = 0; c < way; ++c) {
    for (std::size_t i = 0; i < shot; ++i) ep.support.push_back({random_unit_rows(k, d, rng), static_cast<int>(c)});
    for (std::size_t i = 0; i < queries; ++i) ep.query.push_back({random_unit_rows(k, d, rng), static_cast<int>(c)});
  }
  return ep;
}

enc::EncoderParams random_encoder(std::size_t d, std::size_t h, Rng& rng) {
  enc::EncoderParams p = enc::init_encoder(d, h, 5.0, rng);
  p.head.w2 = Matrix::identity(d) + compose::gaussian_matrix(d, d, 0.3, rng);
  p.head.log_tau += 0.2 * rng.normal();
  return p;
}

CheckSection check_holistic(std::size_t configurations, std::uint64_t seed, bool corrupt) {
  constexpr std::size_t d = 16, k = 7, h = 16;
  CheckSection out;
  out.table.header = {"fixture", "index", "numerical_rank", "sigma_1", "sigma_2", "fd_rel_err"};
  const Rng root(seed);
  std::size_t worst_rank = 0, rank_failures = 0;
  double worst_err = 0.0;
  for (std::size_t i = 0; i < configurations; ++i) {
    Rng rng = root.fork(i);
    const enc::EncoderParams params = random_encoder(d, h, rng);
    const Matrix phi = random_unit_rows(k, d, rng);
    const Vector p = compose::random_unit_vector(d, rng);
    const enc::ImageForward f = enc::forward_image(params, phi);

    lab::GradientField g = lab::holistic_grad(f.hol, f.omega, p, f.emb, lab::Reference::raw_projection);
    if (corrupt) g.per_slot *= 1.0 + 1e-3;
    const lab::RankReport rank = lab::field_rank(g);

    auto score = [&](std::span<const double> y_flat) {
      Vector u(d, 0.0);
      for (std::size_t s = 0; s < k; ++s) compose::axpy(f.omega[s], y_flat.subspan(s * d, d), u);
      return compose::cosine(u, p);
    };
    const Vector fd = compose::finite_diff_gradient(score, f.emb.y_raw.data(), 1e-5);
    const double err = compose::relative_error(g.per_slot.data(), fd);

    worst_rank = std::max(worst_rank, rank.numerical_rank);
    if (rank.numerical_rank != 1) ++rank_failures;
    worst_err = std::max(worst_err, err);
    const double s2 = rank.singular_values.size() > 1 ? rank.singular_values[1] : 0.0;
    out.table.rows.push_back({"holistic", fmt(i), fmt(rank.numerical_rank), fmt(rank.singular_values[0]), fmt(s2),
                              fmt(err)});
  }
  out.checks.push_back({"holistic_rank", static_cast<double>(worst_rank), 1.0, rank_failures == 0});
  out.checks.push_back(at_most("holistic_fd", worst_err, 1e-5));
  return out;
}

CheckSection check_chamfer_construction() {
  constexpr std::size_t d = 16, k = 7;
  const double theta = std::numbers::pi / 4.0;
  Matrix z_q(k, d), z_c(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    z_q(i, i) = 1.0;
    z_c(i, i) = std::cos(theta);
    z_c(i, i + k) = std::sin(theta);
  }
  const lab::GradientField g = lab::chamfer_grad(z_q, z_c);
  double err = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double expect = j == i + k ? std::sin(theta) / static_cast<double>(k) : 0.0;
      err = std::max(err, std::abs(g.per_slot(i, j) - expect));
    }
  const lab::RankReport rank = lab::field_rank(g);

  CheckSection out;
  out.table.header = {"fixture", "index", "numerical_rank", "sigma_1", "sigma_2", "fd_rel_err"};
  out.table.rows.push_back({"chamfer_construction", "0", fmt(rank.numerical_rank), fmt(rank.singular_values[0]),
                            fmt(rank.singular_values[1]), fmt(err)});
  out.checks.push_back(at_most("chamfer_exact", err, 1e-12));
  out.checks.push_back({"chamfer_rank", static_cast<double>(rank.numerical_rank), static_cast<double>(k),
                        rank.numerical_rank == k});
  return out;
}

CheckSection check_sinkhorn_limits(std::size_t matrices, const std::vector<double>& epsilons, std::uint64_t seed) {
  constexpr std::size_t k = 7, d = 16;
  struct Agg {
    double min_peak = 1.0, max_dev = 0.0, max_gap = 0.0, max_residual = 0.0;
    bool all_converged = true;
  };
  std::vector<Agg> agg(epsilons.size());
  std::size_t assumption_failures = 0;
  const Rng root(seed);
  for (std::size_t m = 0; m < matrices; ++m) {
    Rng rng = root.fork(m);
    const lab::MarginConfig mc = lab::margin_config(k, d, 0.2, rng);
    const lab::SinkhornProbe probe = lab::sinkhorn_limit_probe(mc.z_q, mc.z_c, epsilons);
    if (!probe.assumptions_hold) ++assumption_failures;
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
      const auto& r = probe.rows[e];
      agg[e].min_peak = std::min(agg[e].min_peak, r.min_peak);
      agg[e].max_dev = std::max(agg[e].max_dev, r.max_dev_uniform);
      agg[e].max_gap = std::max(agg[e].max_gap, r.grad_gap);
      agg[e].max_residual = std::max(agg[e].max_residual, r.residual);
      agg[e].all_converged = agg[e].all_converged && r.converged;
    }
  }
  CheckSection out;
  out.table.header = {"epsilon", "matrices", "min_peak", "max_dev_uniform", "max_grad_gap", "max_residual",
                      "all_converged"};
  for (std::size_t e = 0; e < epsilons.size(); ++e)
    out.table.rows.push_back({fmt(epsilons[e]), fmt(matrices), fmt(agg[e].min_peak), fmt(agg[e].max_dev),
                              fmt(agg[e].max_gap), fmt(agg[e].max_residual), fmt(agg[e].all_converged)});
  const auto lo = std::min_element(epsilons.begin(), epsilons.end()) - epsilons.begin();
  const auto hi = std::max_element(epsilons.begin(), epsilons.end()) - epsilons.begin();
  out.checks.push_back({"sinkhorn_margin_fixtures", static_cast<double>(assumption_failures), 0.0,
                        assumption_failures == 0});
  // The limit checks apply only when the sweep reaches the limiting regime.
  if (epsilons[lo] <= 0.01) out.checks.push_back(at_least("sinkhorn_peak_small_eps", agg[lo].min_peak, 0.99));
  if (epsilons[hi] >= 100.0) out.checks.push_back(at_most("sinkhorn_uniform_large_eps", agg[hi].max_dev, 1e-3));
  return out;
}

CheckSection check_spectral_floor(std::size_t batches, std::uint64_t seed) {
  const std::size_t dims[] = {8, 16, 32};
  CheckSection out;
  out.table.header = {"d", "batches", "floor", "min_slack", "equality_gap"};
  const Rng root(seed);
  double worst_slack = INFINITY, worst_gap = 0.0;
  for (std::size_t di = 0; di < 3; ++di) {
    const std::size_t d = dims[di];
    double min_slack = INFINITY;
    std::size_t count = 0;
    for (std::size_t b = di; b < batches; b += 3, ++count) {
      Rng rng = root.fork(b);
      const std::size_t n = d + rng.uniform_index(3 * d);
      min_slack = std::min(min_slack, lab::spectral_floor_check(random_unit_rows(n, d, rng)).slack);
    }
    Rng rng = root.fork(batches + di);
    const double gap = std::abs(lab::spectral_floor_check(compose::random_orthogonal(d, rng)).slack);
    worst_slack = std::min(worst_slack, min_slack);
    worst_gap = std::max(worst_gap, gap);
    out.table.rows.push_back({fmt(d), fmt(count), fmt(lab::spectral_floor(d)), fmt(min_slack), fmt(gap)});
  }
  const double f768 = lab::spectral_floor(768);
  out.table.rows.push_back({"768", "0", fmt(f768), "", ""});
  out.checks.push_back(at_least("spectral_floor_bound", worst_slack, -1e-9));
  out.checks.push_back(at_most("spectral_floor_equality", worst_gap, 1e-9));
  out.checks.push_back(at_most("spectral_floor_d768", std::abs(f768 - 767.0 * 767.0 / 768.0), 1e-9));
  return out;
}

CheckSection check_ce_symmetries(std::size_t trials, std::uint64_t seed) {
  CheckSection out;
  out.table.header = {"kind", "trial", "factor", "ce_before", "ce_after", "delta"};
  const Rng root(seed);
  double worst_rot = 0.0, worst_scale = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = root.fork(t);
    const enc::EncoderParams params = random_encoder(16, 16, rng);
    const compose::Episode ep = random_episode(16, 7, 5, 2, 3, rng);
    const lab::CeCheck rot = lab::ce_rotation_check(params, ep, rng);
    worst_rot = std::max(worst_rot, rot.delta);
    out.table.rows.push_back({"rotation", fmt(t), "", fmt(rot.ce_before), fmt(rot.ce_after), fmt(rot.delta)});
    if (t == 0) {
      for (double c : {0.1, 10.0}) {
        const lab::CeCheck sc = lab::ce_transform_check(params, ep, params.head.w2 * c);
        worst_scale = std::max(worst_scale, sc.delta);
        out.table.rows.push_back({"scale", fmt(t), fmt(c), fmt(sc.ce_before), fmt(sc.ce_after), fmt(sc.delta)});
      }
    }
  }
  out.checks.push_back(at_most("ce_rotation_invariance", worst_rot, 1e-9));
  out.checks.push_back(at_most("ce_scale_invariance", worst_scale, 1e-9));
  return out;
}

CheckSection check_cc_rebase(std::size_t batches, std::uint64_t seed) {
  CheckSection out;
  out.table.header = {"batch", "off_diag_before", "off_diag_after", "ce_before", "ce_after", "delta_ce"};
  const Rng root(seed);
  double worst_off = 0.0, worst_ce = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    Rng rng = root.fork(b);
    const enc::EncoderParams params = random_encoder(8, 16, rng);
    const compose::Episode ep = random_episode(8, 7, 5, 2, 2, rng);
    const lab::RebaseReport r = lab::cc_rebase(params, ep);
    worst_off = std::max(worst_off, r.off_diag_after);
    worst_ce = std::max(worst_ce, r.delta_ce);
    out.table.rows.push_back(
        {fmt(b), fmt(r.off_diag_before), fmt(r.off_diag_after), fmt(r.ce_before), fmt(r.ce_after), fmt(r.delta_ce)});
  }
  out.checks.push_back(at_most("cc_rebase_off_diagonal", worst_off, 1e-8));
  out.checks.push_back(at_most("cc_rebase_ce", worst_ce, 1e-9));
  return out;
}

std::vector<EncoderFdCase> encoder_fd_cases() {
  std::vector<EncoderFdCase> cases;
  auto with_decor = [](enc::DecorrelationKind kind, double lambda) {
    enc::ObjectiveConfig o;
    o.decor.kind = kind;
    o.decor.lambda_d = lambda;
    o.kappa = 2;
    return o;
  };
  cases.push_back({"cross_correlation", with_decor(enc::DecorrelationKind::cross_correlation, 0.1)});
  cases.push_back({"vicreg_variance", with_decor(enc::DecorrelationKind::vicreg_variance, 0.1)});
  cases.push_back({"spectral", with_decor(enc::DecorrelationKind::spectral, 0.1)});
  enc::ObjectiveConfig ct = with_decor(enc::DecorrelationKind::none, 0.0);
  ct.ct_weight = 1.0;
  cases.push_back({"chamfer_ce", ct});
  enc::ObjectiveConfig mix = with_decor(enc::DecorrelationKind::cross_correlation, 0.1);
  mix.ct_weight = 0.5;
  cases.push_back({"ct_mixture", mix});
  return cases;
}

double encoder_fd_error(const enc::EncoderParams& params, const compose::Episode& episode,
                        const enc::ObjectiveConfig& objective) {
  const std::size_t d = params.dim(), h = params.hidden_dim();
  const Vector analytic = enc::flatten(enc::encoder_gradients(params, episode, objective).grad);
  const Vector x = enc::flatten(params);
  const Vector fd = compose::finite_diff_gradient(
      [&](std::span<const double> flat) { return enc::episode_loss(enc::unflatten(flat, d, h), episode, objective).total; },
      x, 1e-5);
  const std::size_t sizes[] = {h * d, h, d * d, 1};
  std::size_t off = 0;
  double worst = 0.0;
  for (std::size_t n : sizes) {
    worst = std::max(worst, block_error(std::span(analytic).subspan(off, n), std::span(fd).subspan(off, n)));
    off += n;
  }
  return worst;
}

CheckSection check_encoder_fd(std::size_t episodes, std::uint64_t seed) {
  CheckSection out;
  out.table.header = {"objective", "episodes", "max_rel_err"};
  const Rng root(seed);
  double worst = 0.0;
  for (const auto& c : encoder_fd_cases()) {
    double case_worst = 0.0;
    for (std::size_t i = 0; i < episodes; ++i) {
      Rng rng = root.fork(i);
      const enc::EncoderParams params = random_encoder(6, 5, rng);
      const compose::Episode ep = random_episode(6, 4, 3, 2, 2, rng);
      case_worst = std::max(case_worst, encoder_fd_error(params, ep, c.objective));
    }
    worst = std::max(worst, case_worst);
    out.table.rows.push_back({c.name, fmt(episodes), fmt(case_worst)});
  }
  out.checks.push_back(at_most("encoder_fd", worst, 1e-4));
  return out;
}

CheckSection check_alignment(const ExperimentConfig& cfg) {
  CheckSection out;
  out.table.header = {"variant", "score", "mean_s", "episodes", "fields", "skipped_pairs"};
  double s[2] = {0.0, 0.0};
  const Variant variants[2] = {Variant::compose, Variant::compose_ct};
  for (int i = 0; i < 2; ++i) {
    const ExperimentConfig vc = variant_config(cfg, variants[i]);
    const TrainedRun run = train(vc);
    const lab::AlignmentReport r =
        variant_alignment(vc, run.bench, run.training.params, variants[i], cfg.gradlab.alignment_episodes);
    s[i] = r.mean_s;
    out.table.rows.push_back({to_string(variants[i]), i == 0 ? "holistic" : "ct_mixture", fmt(r.mean_s),
                              fmt(r.episode_count), fmt(r.field_count), fmt(r.skipped_pairs)});
  }
  out.checks.push_back({"alignment_trend", s[0] - s[1], 0.0, s[0] > s[1]});
  return out;
}

}  // namespace app
