#include "app/commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "app/checks.hpp"
#include "app/csv.hpp"
#include "app/experiments.hpp"
#include "app/model_io.hpp"
#include "compose/slot_attention.hpp"

namespace app {

namespace fs = std::filesystem;
namespace bench = compose::bench;
using nlohmann::json;

namespace {

class Clock {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// Collects the run's outputs and writes <command>_manifest.json last.
class Run {
 public:
  Run(std::string command, ExperimentConfig cfg) : command_(std::move(command)), cfg_(std::move(cfg)) {
    hash_ = config_hash(cfg_);
    fs::create_directories(cfg_.output_dir);
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  const std::string& hash() const { return hash_; }
  std::string manifest_name() const { return command_ + "_manifest.json"; }
  std::string path(const std::string& name) const { return (fs::path(cfg_.output_dir) / name).string(); }

  CsvWriter csv(const std::string& name, const std::vector<std::string>& header) {
    files_.push_back(name);
    return CsvWriter(path(name), hash_, header);
  }
  void add_file(const std::string& name) { files_.push_back(name); }
  void time(const std::string& phase) { timings_[phase] = clock_.lap(); }

  void write_table(const std::string& name, const Table& t) {
    CsvWriter w = csv(name, t.header);
    for (const auto& r : t.rows) w.write_row(r);
    w.close();
  }

  void finish(json extra = json::object()) {
    for (const auto& f : files_)
      if (!fs::exists(path(f))) throw compose::InvalidArgument("expected output '" + f + "' is missing");
    json m;
    m["command"] = command_;
    m["version"] = kVersion;
    m["config_hash"] = hash_;
    m["config"] = config_to_json(cfg_);
    m["files"] = files_;
    m["timings_seconds"] = timings_;
    for (auto& [k, v] : extra.items()) m[k] = v;
    std::ofstream out(path(manifest_name()), std::ios::binary | std::ios::trunc);
    out << m.dump(2) << '\n';
    if (!out) throw compose::InvalidArgument("failed writing " + manifest_name());
  }

 private:
  std::string command_;
  ExperimentConfig cfg_;
  std::string hash_;
  std::vector<std::string> files_;
  json timings_ = json::object();
  Clock clock_;
};

void write_eval_tables(Run& run, const EvalReport& report) {
  std::vector<std::string> header;
  std::vector<std::string> cells;
  for (const auto& s : report.splits) {
    header.push_back(s.split + "_acc");
    header.push_back(s.split + "_ci");
    cells.push_back(fmt(s.accuracy));
    cells.push_back(fmt(s.ci));
  }
  header.push_back("H_a");
  header.push_back("C_off");
  cells.push_back(fmt(report.h_a));
  cells.push_back(fmt(report.c_off));
  CsvWriter m = run.csv("metrics.csv", header);
  m.write_row(cells);
  m.close();

  CsvWriter e = run.csv("episodes.csv", {"split", "episode", "n_correct", "n_query", "accuracy"});
  for (const auto& s : report.splits)
    for (const auto& r : s.episodes) e.row(s.split, r.episode, r.n_correct, r.n_query, r.accuracy);
  e.close();
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Sweep values as JSON, from --values or the config.
json sweep_values(const CommandOptions& opts, const ExperimentConfig& cfg, const std::string& parameter) {
  if (!opts.sweep_values) return cfg.sweep.values;
  json arr = json::array();
  for (const auto& tok : split_commas(*opts.sweep_values)) {
    if (parameter == "matcher_kind") {
      arr.push_back(tok);
      continue;
    }
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      arr.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + tok + "' is not a number");
    }
  }
  return arr;
}

std::string value_text(const json& v) { return v.is_string() ? v.get<std::string>() : fmt(v.get<double>()); }

// Applies one sweep point; returns true when the model must be retrained.
bool apply_sweep_value(ExperimentConfig& c, const std::string& parameter, const json& v) {
  auto number = [&]() {
    if (!v.is_number()) throw ConfigError("sweep." + parameter + " values must be numbers");
    return v.get<double>();
  };
  if (parameter == "lambda_d") {
    c.loss.lambda_d = number();
    return true;
  }
  if (parameter == "gamma_blend") {
    c.matcher.gamma_blend = number();
  } else if (parameter == "shots") {
    const double s = number();
    if (s < 1 || s != std::floor(s)) throw ConfigError("sweep.shots values must be positive integers");
    c.evaluation.shot = static_cast<std::size_t>(s);
  } else if (parameter == "matcher_kind") {
    if (!v.is_string()) throw ConfigError("sweep.matcher_kind values must be strings");
    try {
      c.matcher.kind = compose::match::matcher_kind_from_string(v.get<std::string>());
    } catch (const compose::Error& e) {
      throw ConfigError(std::string("sweep.matcher_kind: ") + e.what());
    }
  } else if (parameter == "beta") {
    c.matcher.beta = number();
  } else if (parameter == "epsilon") {
    c.matcher.epsilon = number();
  } else {
    throw ConfigError("unknown sweep parameter '" + parameter + "'");
  }
  return false;
}

}  // namespace

ExperimentConfig resolve_config(const CommandOptions& opts) {
  ExperimentConfig c = opts.config_path ? load_config(*opts.config_path) : ExperimentConfig{};
  if (opts.out_dir) c.output_dir = *opts.out_dir;
  if (opts.seed) c.seed = *opts.seed;
  if (opts.workers) c.workers = *opts.workers;
  if (opts.episodes) c.evaluation.episodes = *opts.episodes;
  c.validate();
  return c;
}

int cmd_train(const CommandOptions& opts) {
  Run run("train", resolve_config(opts));
  const TrainedRun trained = train(run.cfg());
  run.time("train");

  save_model(run.path("model.bin"), trained.training.params, run.cfg().dimensions.k);
  run.add_file("model.bin");

  CsvWriter curve = run.csv("loss_curve.csv", {"session", "step", "ce", "ct", "decor", "total"});
  for (const auto& r : trained.training.curve) curve.row(r.session, r.step, r.loss.ce, r.loss.ct, r.loss.decor, r.loss.total);
  curve.close();

  CsvWriter log = run.csv("session_log.csv", {"session", "steps", "seen_classes", "buffer_classes", "mean_loss",
                                              "seen_accuracy", "base_accuracy"});
  compose::Vector base;
  for (const auto& s : trained.training.sessions) {
    log.row(s.session, s.steps, s.seen_classes, s.buffer_classes, s.mean_loss, s.seen_accuracy, s.base_accuracy);
    base.push_back(s.base_accuracy);
  }
  log.close();
  run.time("write");
  run.finish({{"forgetting_factor", base.empty() ? 0.0 : bench::forgetting_factor(base)}});
  return 0;
}

int cmd_eval(const CommandOptions& opts) {
  Run run("eval", resolve_config(opts));
  const std::string model_path = opts.model_path.value_or(run.path("model.bin"));
  const SavedModel model = load_model(model_path);
  if (model.params.dim() != run.cfg().dimensions.d || model.num_slots != run.cfg().dimensions.k ||
      model.params.hidden_dim() != run.cfg().dimensions.h)
    throw ConfigError("model '" + model_path + "' does not match dimensions in the config");
  const bench::Benchmark b = bench::make_benchmark(run.cfg().geometry(), run.cfg().seed);
  run.time("setup");
  const EvalReport report = evaluate(run.cfg(), b, model.params);
  run.time("evaluate");
  write_eval_tables(run, report);
  run.finish({{"model", model_path}});
  return 0;
}

int cmd_gradlab(const CommandOptions& opts) {
  Run run("gradlab", resolve_config(opts));
  const ExperimentConfig& cfg = run.cfg();
  const auto& g = cfg.gradlab;
  const compose::Rng root(cfg.seed);
  auto seed_for = [&](std::uint64_t stream) { return root.fork(stream).seed(); };

  std::vector<CheckResult> checks;
  auto take = [&](CheckSection s, Table& into) {
    checks.insert(checks.end(), s.checks.begin(), s.checks.end());
    if (into.header.empty()) into.header = s.table.header;
    into.rows.insert(into.rows.end(), s.table.rows.begin(), s.table.rows.end());
  };

  Table rank, sinkhorn, floor, rotation, rebase, encoder, alignment;
  take(check_holistic(g.configurations, seed_for(1), opts.corrupt_gradient), rank);
  take(check_chamfer_construction(), rank);
  run.time("rank");
  take(check_sinkhorn_limits(g.sinkhorn_matrices, g.epsilons, seed_for(2)), sinkhorn);
  run.time("sinkhorn");
  take(check_spectral_floor(g.floor_batches, seed_for(3)), floor);
  take(check_ce_symmetries(g.rotation_trials, seed_for(4)), rotation);
  take(check_cc_rebase(g.rebase_batches, seed_for(5)), rebase);
  run.time("geometry");
  take(check_encoder_fd(g.encoder_fd_episodes, seed_for(6)), encoder);
  run.time("encoder_fd");
  take(check_alignment(cfg), alignment);
  run.time("alignment");

  run.write_table("rank.csv", rank);
  run.write_table("sinkhorn.csv", sinkhorn);
  run.write_table("floor.csv", floor);
  run.write_table("rotation.csv", rotation);
  run.write_table("rebase.csv", rebase);
  run.write_table("encoder_fd.csv", encoder);
  run.write_table("alignment.csv", alignment);

  CsvWriter summary = run.csv("summary.csv", {"check", "value", "threshold", "pass"});
  std::vector<std::string> failed;
  for (const auto& c : checks) {
    summary.row(c.name, c.value, c.threshold, c.pass);
    if (!c.pass) failed.push_back(c.name);
  }
  summary.close();
  run.finish({{"failed_checks", failed}});

  for (const auto& name : failed) std::cerr << "check failed: " << name << '\n';
  return failed.empty() ? 0 : 1;
}

int cmd_sweep(const CommandOptions& opts) {
  Run run("sweep", resolve_config(opts));
  const std::string parameter = opts.sweep_parameter.value_or(run.cfg().sweep.parameter);
  if (std::find(kSweepParameters.begin(), kSweepParameters.end(), parameter) == kSweepParameters.end())
    throw ConfigError("unknown sweep parameter '" + parameter + "'");
  const json values = sweep_values(opts, run.cfg(), parameter);
  if (values.empty()) throw ConfigError("sweep needs at least one value");

  // Validate every point before spending time on training.
  std::vector<ExperimentConfig> points;
  bool retrain = false;
  for (const auto& v : values) {
    ExperimentConfig c = run.cfg();
    retrain = apply_sweep_value(c, parameter, v);
    c.validate();
    points.push_back(std::move(c));
  }

  CsvWriter out = run.csv("sweep.csv", {"parameter", "value", "split", "accuracy", "ci"});
  std::optional<TrainedRun> shared;
  if (!retrain) shared = train(run.cfg());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const TrainedRun trained = retrain ? train(points[i]) : *shared;
    const EvalReport r = evaluate(points[i], trained.bench, trained.training.params);
    const std::string value = value_text(values[i]);
    for (const auto& s : r.splits) out.row(parameter, value, s.split, s.accuracy, s.ci);
    out.row(parameter, value, "H_a", r.h_a, 0.0);
  }
  out.close();
  run.time("sweep");
  run.finish({{"parameter", parameter}, {"values", values}});
  return 0;
}

int cmd_purity(const CommandOptions& opts) {
  Run run("purity", resolve_config(opts));
  const ExperimentConfig& cfg = run.cfg();
  const bench::Benchmark b = bench::make_benchmark(cfg.geometry(), cfg.seed);
  const compose::Rng root = compose::Rng(cfg.seed).fork(0x50555249);

  std::vector<compose::Matrix> attn;
  std::vector<std::vector<int>> labels;
  for (std::size_t i = 0; i < cfg.purity.images; ++i) {
    compose::Rng rng = root.fork(i);
    const auto& scene = b.splits.train[rng.uniform_index(b.splits.train.size())];
    const compose::slot::PatchFeatures f = bench::render_scene(b.backbone.pool, scene, b.render, rng);
    attn.push_back(compose::slot::run_slot_attention(b.backbone.slots, f, b.backbone.num_slots, rng).attn);
    labels.push_back(f.labels);
  }
  const double rho = compose::slot::slot_purity(attn, labels);
  CsvWriter out = run.csv("purity.csv", {"images", "num_slots", "attn_sharpness", "purity"});
  out.row(cfg.purity.images, cfg.dimensions.k, cfg.benchmark.attn_sharpness, rho);
  out.close();
  run.time("purity");
  run.finish();
  return 0;
}

}  // namespace app
