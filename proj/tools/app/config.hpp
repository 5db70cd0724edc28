#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "compose/errors.hpp"
#include "compose/matchers.hpp"
#include "compose/synth_bench.hpp"

namespace app {

class ConfigError : public compose::Error {
 public:
  using Error::Error;
};

struct Dimensions {
  std::size_t d = 32;
  std::size_t k = 7;
  std::size_t h = 64;
  std::size_t kappa = 4;
};

struct LossConfig {
  compose::enc::DecorrelationKind decorrelation = compose::enc::DecorrelationKind::cross_correlation;
  double lambda_d = 0.02;
  double gamma_hinge = 1.0;
  double std_floor = 1e-6;
  double ct_weight = 0.0;
  bool prototype_stop_gradient = false;
};

struct MatcherSection {
  compose::match::MatcherKind kind = compose::match::MatcherKind::hard_chamfer;
  double beta = 20.0;
  double epsilon = 0.05;
  int max_iters = 1000;
  double tol = 1e-9;
  double gamma_blend = 0.3;
};

struct TrainingSection {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double tau_init = 10.0;
  std::size_t steps_per_session = 200;
  std::size_t way = 5;
  std::size_t shot = 5;
  std::size_t queries = 5;
  bool replay = true;
  std::size_t replay_per_class = 20;
  std::size_t log_eval_episodes = 20;
};

struct BenchmarkSection {
  std::size_t grid_rows = 2;
  std::size_t grid_cols = 2;
  std::size_t patches_per_cell = 4;
  std::size_t n_concepts = 12;
  std::size_t n_train_concepts = 8;
  std::size_t n_sessions = 3;
  std::size_t classes_per_session = 6;
  std::size_t n_pro_classes = 0;
  double spread = 0.1;
  double noise = 0.05;
  double max_overlap = 0.3;
  double sub_spread_factor = 2.0;
  double attn_sharpness = 10.0;
  double slot_prior_std = 0.1;
  int slot_iterations = 3;
  bool include_non = false;
  bool include_sub = false;
};

struct EvaluationSection {
  std::size_t episodes = 300;
  std::size_t way = 5;
  std::size_t shot = 1;
  std::size_t queries = 5;
};

struct GradlabSection {
  std::size_t configurations = 100;
  std::size_t alignment_episodes = 300;
  std::size_t sinkhorn_matrices = 20;
  std::vector<double> epsilons{1.0, 0.3, 0.1, 0.03, 0.01, 100.0};
  std::size_t floor_batches = 1000;
  std::size_t rotation_trials = 20;
  std::size_t rebase_batches = 20;
  std::size_t encoder_fd_episodes = 10;
};

struct SweepSection {
  std::string parameter = "lambda_d";
  nlohmann::json values = nlohmann::json::array({0.0, 0.005, 0.02, 0.1});
};

struct PuritySection {
  std::size_t images = 200;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "compose_out";
  std::size_t workers = 1;
  Dimensions dimensions;
  LossConfig loss;
  MatcherSection matcher;
  TrainingSection training;
  BenchmarkSection benchmark;
  EvaluationSection evaluation;
  GradlabSection gradlab;
  SweepSection sweep;
  PuritySection purity;

  // Cross-field checks; throws ConfigError naming the field.
  void validate() const;

  compose::bench::GeometryConfig geometry() const;
  compose::bench::TrainConfig train_config() const;
  compose::match::MatcherConfig matcher_config() const;
  compose::bench::EvalSpec eval_spec() const;
};

std::string to_string(compose::enc::DecorrelationKind kind);
compose::enc::DecorrelationKind decorrelation_from_string(const std::string& name);

// Strict: unknown keys and wrong types raise ConfigError; absent keys keep defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

// FNV-1a 64 of the canonical JSON dump without workers/output_dir, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace app
