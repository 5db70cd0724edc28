#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "compose/encoder.hpp"
#include "compose/episode.hpp"
#include "compose/matchers.hpp"
#include "compose/rng.hpp"
#include "compose/slot_attention.hpp"

namespace compose::bench {

struct ConceptPool {
  std::vector<Vector> concepts;  // M unit directions
  Vector background;             // unit, also kept below max_overlap
  double spread = 0.1;
  double max_overlap = 0.3;

  std::size_t dim() const { return background.size(); }
};

// Rejection-sampled pool: every pair among concepts and background has
// |cos| <= max_overlap.
ConceptPool build_pool(std::size_t m, std::size_t d, double spread, double max_overlap, Rng& rng,
                       std::size_t max_attempts = 100000);

struct SceneClass {
  int class_id = 0;
  std::vector<std::size_t> concept_ids;  // distinct, unordered
};

struct RenderSpec {
  std::size_t grid_rows = 2;
  std::size_t grid_cols = 2;
  std::size_t patches_per_cell = 4;
  double spread = 0.1;  // per-instance jitter of the concept direction
  double noise = 0.05;  // per-patch jitter
};

// Each concept lands in a distinct random cell; remaining cells are
// background. Patch labels are concept index + 1, background 0.
slot::PatchFeatures render_scene(const ConceptPool& pool, const SceneClass& scene, const RenderSpec& spec, Rng& rng);

struct SplitSpec {
  std::vector<SceneClass> train;
  std::vector<SceneClass> sys;  // unseen pairs of train concepts
  std::vector<SceneClass> noc;  // pairs of held-out concepts
  std::vector<SceneClass> pro;  // triples of train concepts (optional)
  std::vector<std::vector<int>> sessions;  // partition of train class ids
  std::size_t n_train_concepts = 0;

  // Throws InvalidArgument when a split leaks concepts it must not contain.
  void validate() const;
  std::vector<SceneClass> classes_of(const std::vector<int>& ids) const;
};

SplitSpec make_splits(const ConceptPool& pool, std::size_t n_train_concepts, std::size_t n_sessions,
                      std::size_t classes_per_session, Rng& rng, std::size_t n_pro_classes = 0);

// The frozen feature pipeline: renderer plus slot attention readout.
struct Backbone {
  ConceptPool pool;
  slot::SlotAttentionParams slots;
  std::size_t num_slots = 7;
};

LabeledSlots encode_image(const Backbone& backbone, const SceneClass& scene, const RenderSpec& spec, Rng& rng);

Episode sample_episode(const std::vector<SceneClass>& part, std::size_t way, std::size_t shot, std::size_t queries,
                       const Backbone& backbone, const RenderSpec& spec, Rng& rng);

struct GeometryConfig {
  std::size_t dim = 32;
  std::size_t num_slots = 7;
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

  void validate() const;
  RenderSpec render() const;
};

struct Benchmark {
  Backbone backbone;
  SplitSpec splits;
  RenderSpec render;
};

// Pool, slot parameters and splits are all derived from `seed` alone.
Benchmark make_benchmark(const GeometryConfig& geometry, std::uint64_t seed);

struct TrainConfig {
  std::size_t hidden = 64;
  double tau_init = 10.0;
  enc::AdamConfig adam;
  enc::ObjectiveConfig objective;
  std::size_t steps_per_session = 200;
  std::size_t way = 5;
  std::size_t shot = 5;
  std::size_t queries = 5;
  bool replay = true;
  std::size_t replay_per_class = 20;
  std::size_t log_eval_episodes = 20;

  void validate() const;
};

struct LossRecord {
  std::size_t session = 0;
  std::size_t step = 0;  // within the session
  enc::LossBreakdown loss;
};

struct SessionLog {
  std::size_t session = 0;
  std::size_t steps = 0;
  std::size_t seen_classes = 0;
  std::size_t buffer_classes = 0;
  double mean_loss = 0.0;
  double seen_accuracy = 0.0;
  double base_accuracy = 0.0;
};

struct TrainingResult {
  enc::EncoderParams initial;
  enc::EncoderParams params;
  std::vector<LossRecord> curve;
  std::vector<SessionLog> sessions;
};

TrainingResult run_continual_training(const Benchmark& bench, const TrainConfig& cfg,
                                      const match::MatcherConfig& matcher, std::uint64_t seed);

struct EvalSpec {
  std::size_t episodes = 300;
  std::size_t way = 5;
  std::size_t shot = 5;
  std::size_t queries = 5;
};

struct EpisodeRecord {
  std::size_t episode = 0;
  std::size_t n_correct = 0;
  std::size_t n_query = 0;
  double accuracy = 0.0;
};

struct SplitResult {
  std::string split;
  double accuracy = 0.0;
  double ci = 0.0;  // 95% normal approximation half-width
  std::vector<EpisodeRecord> episodes;
};

// Episode i is drawn from Rng(seed).fork(i), so results do not depend on the
// worker count.
SplitResult evaluate_split(const std::string& name, const enc::EncoderParams& params, const Backbone& backbone,
                           const std::vector<SceneClass>& part, const RenderSpec& render, const EvalSpec& spec,
                           const match::MatcherConfig& matcher, std::uint64_t seed, std::size_t workers = 1);

struct NamedPart {
  std::string name;
  std::vector<SceneClass> classes;
  RenderSpec render;
};
// sys and noc always; pro/non/sub when configured.
std::vector<NamedPart> evaluation_parts(const Benchmark& bench, const GeometryConfig& geometry);

struct MeanCi {
  double mean = 0.0;
  double ci = 0.0;
};
MeanCi mean_ci(std::span<const double> values);

double harmonic_mean(std::span<const double> values);
// First minus last entry of a per-session base-class accuracy log.
double forgetting_factor(std::span<const double> base_accuracy);

// Mean |off-diagonal| correlation of the projected slots of `episodes`.
double mean_off_diag_correlation(const enc::EncoderParams& params, const std::vector<Episode>& episodes,
                                 double std_floor = 1e-6);

}  // namespace compose::bench
