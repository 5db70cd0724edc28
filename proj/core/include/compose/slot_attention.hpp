#pragma once

#include <cstddef>
#include <vector>

#include "compose/matrix.hpp"
#include "compose/rng.hpp"

namespace compose::slot {

// N x D patch tokens of one image. `labels` is either empty or holds one
// ground-truth category per patch (0 = background).
struct PatchFeatures {
  Matrix tokens;
  std::vector<int> labels;

  std::size_t num_patches() const { return tokens.rows(); }
  std::size_t dim() const { return tokens.cols(); }
};

// Gated recurrent cell over D-dim states:
//   r = sigmoid(W_r x + U_r h + b_r)
//   z = sigmoid(W_z x + U_z h + b_z)
//   n = tanh(W_n x + b_n + r * (U_n h))
//   h' = (1 - z) * n + z * h
struct GruParams {
  Matrix w_r, u_r, w_z, u_z, w_n, u_n;
  Vector b_r, b_z, b_n;
};

Vector gru_cell(const GruParams& gru, std::span<const double> x, std::span<const double> h);

struct SlotAttentionParams {
  Matrix w_q, w_k, w_v;
  GruParams gru;
  Vector prior_mean;
  Vector prior_log_std;
  int iterations = 3;

  std::size_t dim() const { return w_q.rows(); }
  void validate() const;
};

// Seeded random parameters: projections and GRU weights ~ N(0, 1/D),
// zero biases, standard-normal-scaled prior.
SlotAttentionParams random_params(std::size_t dim, int iterations, Rng& rng);

// Hand-built parameters for which patches bind to the slot they are most
// aligned with: W_q = W_k = sqrt(sharpness * sqrt(D)) I so that the attention
// logits are sharpness * <s_k, F_n>; W_v = I; the GRU update gate is closed
// (h' ~ tanh(x)) so each slot moves to the mean of the patches it won.
SlotAttentionParams oracle_params(std::size_t dim, double sharpness, int iterations, double prior_std);

struct SlotState {
  Matrix slots;  // K x D
  Matrix attn;   // K x N, columns sum to one
};

struct SlotAggregates {
  Matrix phi;                     // K x D, unit rows unless flagged
  std::vector<bool> degenerate;   // rows whose weighted sum vanished (left zero)

  std::size_t num_slots() const { return phi.rows(); }
  std::size_t dim() const { return phi.cols(); }
};

Matrix init_slots(const SlotAttentionParams& params, std::size_t num_slots, Rng& rng);

// One competitive-attention + GRU step.
SlotState attention_iteration(const SlotAttentionParams& params, const Matrix& slots, const PatchFeatures& features);

// `iterations` steps from init_slots.
SlotState run_slot_attention(const SlotAttentionParams& params, const PatchFeatures& features, std::size_t num_slots,
                             Rng& rng);
// Same loop from explicit initial slots (used by equivariance checks).
SlotState run_slot_attention_from(const SlotAttentionParams& params, const PatchFeatures& features, Matrix slots);

// phi_k = normalize(sum_n attn[k, n] F_n).
SlotAggregates aggregate_slots(const Matrix& attn, const PatchFeatures& features);

// Strict-majority slot purity averaged over slots, then images.
double slot_purity(const std::vector<Matrix>& attn_batch, const std::vector<std::vector<int>>& labels_batch);

}  // namespace compose::slot
