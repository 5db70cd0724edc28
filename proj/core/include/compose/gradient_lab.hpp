#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "compose/encoder.hpp"
#include "compose/episode.hpp"
#include "compose/matchers.hpp"
#include "compose/matrix.hpp"
#include "compose/rng.hpp"

namespace compose::lab {

// Which variable the per-slot gradient is taken with respect to.
enum class Reference { raw_projection, unit_embedding };

struct GradientField {
  Matrix per_slot;  // K x D
  Reference reference = Reference::unit_embedding;
};

struct AlignmentReport {
  double mean_s = 0.0;
  Matrix pairwise;  // K x K mean cosines, unit diagonal
  std::size_t episode_count = 0;
  std::size_t field_count = 0;
  std::size_t skipped_pairs = 0;  // pairs involving a zero gradient row
};

struct RankReport {
  Vector singular_values;
  std::size_t numerical_rank = 0;
  double tolerance = 0.0;  // absolute threshold tol_ratio * sigma_1
};

// Gradient of cos(e, P_c) with respect to each slot's raw projection or unit embedding.
GradientField holistic_grad(const enc::HolisticEmbedding& hol, std::span<const double> omega,
                            std::span<const double> p_c, const enc::SlotEmbeddings& emb, Reference reference);

// Gradient of the forward Chamfer term (1/K) sum_k max_k' <z_k, z_c_k'> with respect to z_q.
GradientField chamfer_grad(const Matrix& z_q, const Matrix& z_c);

enum class AssignmentMode { direct, full };

// Gradient of s_T = (1/K) sum T S with respect to z_q. `direct` freezes T;
// `full` adds the coupling's own dependence by central differences with the
// coupling re-solved from cfg at every perturbation.
GradientField assignment_grad(const match::MatcherConfig& cfg, const Matrix& t, const Matrix& z_q, const Matrix& z_c,
                              AssignmentMode mode, double fd_step = 1e-6);

// Converts d s / d y_raw into the z reference: rows ||y_k|| (I - z_k z_k^T) g_k.
GradientField to_unit_reference(const Matrix& grad_y, const enc::SlotEmbeddings& emb);

// Mean pairwise cosine between rows of each field.
AlignmentReport alignment_of_fields(const std::vector<GradientField>& fields);

enum class ScoreKind { holistic, chamfer, ct_mixture };

struct AlignmentOptions {
  ScoreKind score = ScoreKind::holistic;
  double ct_weight = 0.5;  // ct_mixture only
  std::size_t kappa = 4;
};

// z-reference per-slot gradients of the true-class score of every query.
std::vector<GradientField> query_gradient_fields(const enc::EncoderParams& params, const Episode& episode,
                                                 const AlignmentOptions& opts);
AlignmentReport alignment_metric(const enc::EncoderParams& params, const std::vector<Episode>& episodes,
                                 const AlignmentOptions& opts);

RankReport field_rank(const GradientField& field, double tol_ratio = 1e-6);

struct MarginCheck {
  double margin = 0.0;           // min over rows of best minus runner-up
  bool collision_free = false;   // row argmaxes form a permutation
  std::vector<std::size_t> argmax;
};
MarginCheck check_margin(const Matrix& s);

// Square K x K unit-row pair (z_q, z_c) whose cosine matrix has row margin
// >= margin and a collision-free row argmax. Rejection sampled.
struct MarginConfig {
  Matrix z_q;
  Matrix z_c;
  std::size_t attempts = 0;
};
MarginConfig margin_config(std::size_t k, std::size_t d, double margin, Rng& rng, double noise = 0.35,
                           std::size_t max_attempts = 100000);

struct SinkhornProbeRow {
  double epsilon = 0.0;
  double min_peak = 0.0;        // min_k T_{k, k*(k)}
  double max_dev_uniform = 0.0; // max |T - 1/K|
  double grad_gap = 0.0;        // ||G_direct(eps) - G_hard||_F
  bool converged = false;
  double residual = 0.0;
};

struct SinkhornProbe {
  MarginCheck assumptions;
  bool assumptions_hold = false;
  std::string failure;  // which assumption fails, empty if none
  std::vector<SinkhornProbeRow> rows;
};

SinkhornProbe sinkhorn_limit_probe(const Matrix& z_q, const Matrix& z_c, const std::vector<double>& eps_list,
                                   int max_iters = 1000, double tol = 1e-9);

struct CeCheck {
  double ce_before = 0.0;
  double ce_after = 0.0;
  double delta = 0.0;  // |after - before|
};

// Holistic CE (no decorrelation) with the head replaced by `w2`.
double holistic_ce(const enc::EncoderParams& params, const Episode& episode, const Matrix& w2);
CeCheck ce_transform_check(const enc::EncoderParams& params, const Episode& episode, const Matrix& w2_new);
// W2 -> U W2 for a Haar-random orthogonal U.
CeCheck ce_rotation_check(const enc::EncoderParams& params, const Episode& episode, Rng& rng);

struct RebaseReport {
  Matrix w2_rebased;
  double off_diag_before = 0.0;  // Frobenius mass of off-diagonal covariance of y
  double off_diag_after = 0.0;
  double ce_before = 0.0;
  double ce_after = 0.0;
  double delta_ce = 0.0;
};

// Slot rows of every image in the episode, stacked.
Matrix episode_slot_batch(const Episode& episode);
// Population covariance of the rows of x.
Matrix covariance(const Matrix& x);
// Rotates W2 by the eigenbasis of Sigma_y = W2 Sigma_phi W2^T so the slot
// covariance becomes diagonal. Throws NumericError when Sigma_phi is singular.
RebaseReport cc_rebase(const enc::EncoderParams& params, const Episode& episode);

struct SpectralFloor {
  double loss = 0.0;
  double floor = 0.0;
  double slack = 0.0;
};
double spectral_floor(std::size_t d);
SpectralFloor spectral_floor_check(const Matrix& z_batch);

}  // namespace compose::lab
