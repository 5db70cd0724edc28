#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "app/config.hpp"
#include "compose/encoder.hpp"
#include "compose/episode.hpp"
#include "compose/rng.hpp"

namespace app {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct CheckSection {
  std::vector<CheckResult> checks;
  Table table;
};

// Random unit-row slot sets; labels 0..way-1.
compose::Episode random_episode(std::size_t d, std::size_t k, std::size_t way, std::size_t shot, std::size_t queries,
                                compose::Rng& rng);
// init_encoder with a Gaussian head and a perturbed temperature, so no parameter sits at a special point.
compose::enc::EncoderParams random_encoder(std::size_t d, std::size_t h, compose::Rng& rng);

// Holistic field at the raw-projection reference: rank one, and equal to
// central differences. `corrupt` scales the analytic field by 1 + 1e-3.
CheckSection check_holistic(std::size_t configurations, std::uint64_t seed, bool corrupt = false);
// Orthogonal-offset construction with a closed-form Chamfer field.
CheckSection check_chamfer_construction();
CheckSection check_sinkhorn_limits(std::size_t matrices, const std::vector<double>& epsilons, std::uint64_t seed);
CheckSection check_spectral_floor(std::size_t batches, std::uint64_t seed);
CheckSection check_ce_symmetries(std::size_t trials, std::uint64_t seed);
CheckSection check_cc_rebase(std::size_t batches, std::uint64_t seed);

struct EncoderFdCase {
  std::string name;
  compose::enc::ObjectiveConfig objective;
};
std::vector<EncoderFdCase> encoder_fd_cases();
// Max relative error over the W1, v, W2 and log_tau blocks.
double encoder_fd_error(const compose::enc::EncoderParams& params, const compose::Episode& episode,
                        const compose::enc::ObjectiveConfig& objective);
CheckSection check_encoder_fd(std::size_t episodes, std::uint64_t seed);

// Trains the holistic and Chamfer-trained variants and compares alignment.
CheckSection check_alignment(const ExperimentConfig& cfg);

}  // namespace app
