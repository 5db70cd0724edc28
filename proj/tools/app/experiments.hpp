#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "app/config.hpp"
#include "compose/gradient_lab.hpp"
#include "compose/synth_bench.hpp"

namespace app {

// Model variants compared by the trend checks.
enum class Variant { compose, compose_ct, no_decorrelation };
std::string to_string(Variant v);

// Weight of the Chamfer CE in the Chamfer-trained variant.
inline constexpr double kCtMixtureWeight = 0.5;

ExperimentConfig variant_config(const ExperimentConfig& base, Variant v);

struct TrainedRun {
  compose::bench::Benchmark bench;
  compose::bench::TrainingResult training;
};
TrainedRun train(const ExperimentConfig& cfg);

struct EvalReport {
  std::vector<compose::bench::SplitResult> splits;
  double h_a = 0.0;
  double c_off = 0.0;  // mean |off-diagonal| slot correlation on probe episodes
};
EvalReport evaluate(const ExperimentConfig& cfg, const compose::bench::Benchmark& bench,
                    const compose::enc::EncoderParams& params);
const compose::bench::SplitResult& split(const EvalReport& r, const std::string& name);

// Train-class episodes on a stream of their own, used by the alignment metric.
std::vector<compose::Episode> probe_episodes(const ExperimentConfig& cfg, const compose::bench::Benchmark& bench,
                                             std::size_t count);
// Alignment under the score each variant was trained on.
compose::lab::AlignmentReport variant_alignment(const ExperimentConfig& cfg, const compose::bench::Benchmark& bench,
                                                const compose::enc::EncoderParams& params, Variant v,
                                                std::size_t episodes);

}  // namespace app
