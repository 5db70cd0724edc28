#include "app/experiments.hpp"

#include "compose/errors.hpp"

namespace app {

namespace bench = compose::bench;

namespace {
constexpr std::uint64_t kEvalStream = 0x4556414c;
constexpr std::uint64_t kProbeStream = 0x50524f42;
constexpr std::size_t kCorrelationEpisodes = 20;
}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::compose: return "compose";
    case Variant::compose_ct: return "compose_ct";
    case Variant::no_decorrelation: return "lambda0";
  }
  return "?";
}

ExperimentConfig variant_config(const ExperimentConfig& base, Variant v) {
  ExperimentConfig c = base;
  switch (v) {
    case Variant::compose:
      c.loss.ct_weight = 0.0;
      break;
    case Variant::compose_ct:
      c.loss.ct_weight = kCtMixtureWeight;
      break;
    case Variant::no_decorrelation:
      c.loss.ct_weight = 0.0;
      c.loss.lambda_d = 0.0;
      break;
  }
  return c;
}

TrainedRun train(const ExperimentConfig& cfg) {
  TrainedRun r;
  r.bench = bench::make_benchmark(cfg.geometry(), cfg.seed);
  r.training = bench::run_continual_training(r.bench, cfg.train_config(), cfg.matcher_config(), cfg.seed);
  return r;
}

EvalReport evaluate(const ExperimentConfig& cfg, const bench::Benchmark& b, const compose::enc::EncoderParams& params) {
  const compose::Rng root(cfg.seed);
  const auto parts = bench::evaluation_parts(b, cfg.geometry());
  EvalReport r;
  compose::Vector accs;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::uint64_t seed = root.fork(kEvalStream + i).seed();
    r.splits.push_back(bench::evaluate_split(parts[i].name, params, b.backbone, parts[i].classes, parts[i].render,
                                             cfg.eval_spec(), cfg.matcher_config(), seed, cfg.workers));
    accs.push_back(r.splits.back().accuracy);
  }
  bool positive = true;
  for (double a : accs) positive = positive && a > 0.0;
  r.h_a = positive ? bench::harmonic_mean(accs) : 0.0;
  r.c_off = bench::mean_off_diag_correlation(params, probe_episodes(cfg, b, kCorrelationEpisodes), cfg.loss.std_floor);
  return r;
}

const bench::SplitResult& split(const EvalReport& r, const std::string& name) {
  for (const auto& s : r.splits)
    if (s.split == name) return s;
  throw compose::InvalidArgument("no split named '" + name + "'");
}

std::vector<compose::Episode> probe_episodes(const ExperimentConfig& cfg, const bench::Benchmark& b,
                                             std::size_t count) {
  const compose::Rng root = compose::Rng(cfg.seed).fork(kProbeStream);
  const std::size_t way = std::min(cfg.training.way, b.splits.train.size());
  std::vector<compose::Episode> out;
  for (std::size_t i = 0; i < count; ++i) {
    compose::Rng rng = root.fork(i);
    out.push_back(bench::sample_episode(b.splits.train, way, cfg.training.shot, cfg.training.queries, b.backbone,
                                        b.render, rng));
  }
  return out;
}

compose::lab::AlignmentReport variant_alignment(const ExperimentConfig& cfg, const bench::Benchmark& b,
                                                const compose::enc::EncoderParams& params, Variant v,
                                                std::size_t episodes) {
  compose::lab::AlignmentOptions opts;
  opts.kappa = cfg.dimensions.kappa;
  if (v == Variant::compose_ct) {
    opts.score = compose::lab::ScoreKind::ct_mixture;
    opts.ct_weight = kCtMixtureWeight;
  }
  return compose::lab::alignment_metric(params, probe_episodes(cfg, b, episodes), opts);
}

}  // namespace app
