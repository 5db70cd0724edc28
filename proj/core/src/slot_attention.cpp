#include "compose/slot_attention.hpp"

#include <cmath>
#include <map>

#include "compose/errors.hpp"
#include "compose/numeric.hpp"

namespace compose::slot {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_square(const Matrix& m, std::size_t d, const char* name) {
  if (m.rows() != d || m.cols() != d) throw InvalidArgument(std::string("slot attention: ") + name + " must be D x D");
}

}  // namespace

Vector gru_cell(const GruParams& gru, std::span<const double> x, std::span<const double> h) {
  const std::size_t d = h.size();
  const Vector wr = matvec(gru.w_r, x), ur = matvec(gru.u_r, h);
  const Vector wz = matvec(gru.w_z, x), uz = matvec(gru.u_z, h);
  const Vector wn = matvec(gru.w_n, x), un = matvec(gru.u_n, h);
  Vector out(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double r = sigmoid(wr[i] + ur[i] + gru.b_r[i]);
    const double z = sigmoid(wz[i] + uz[i] + gru.b_z[i]);
    const double n = std::tanh(wn[i] + gru.b_n[i] + r * un[i]);
    out[i] = (1.0 - z) * n + z * h[i];
  }
  return out;
}

void SlotAttentionParams::validate() const {
  const std::size_t d = dim();
  if (d == 0) throw InvalidArgument("slot attention: D must be positive");
  if (iterations < 1) throw InvalidArgument("slot attention: iterations must be >= 1");
  require_square(w_q, d, "W_q");
  require_square(w_k, d, "W_k");
  require_square(w_v, d, "W_v");
  for (const Matrix* m : {&gru.w_r, &gru.u_r, &gru.w_z, &gru.u_z, &gru.w_n, &gru.u_n}) require_square(*m, d, "GRU weight");
  for (const Vector* v : {&gru.b_r, &gru.b_z, &gru.b_n, &prior_mean, &prior_log_std})
    if (v->size() != d) throw InvalidArgument("slot attention: bias/prior length must be D");
}

SlotAttentionParams random_params(std::size_t dim, int iterations, Rng& rng) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  SlotAttentionParams p;
  p.w_q = gaussian_matrix(dim, dim, sd, rng);
  p.w_k = gaussian_matrix(dim, dim, sd, rng);
  p.w_v = gaussian_matrix(dim, dim, sd, rng);
  p.gru.w_r = gaussian_matrix(dim, dim, sd, rng);
  p.gru.u_r = gaussian_matrix(dim, dim, sd, rng);
  p.gru.w_z = gaussian_matrix(dim, dim, sd, rng);
  p.gru.u_z = gaussian_matrix(dim, dim, sd, rng);
  p.gru.w_n = gaussian_matrix(dim, dim, sd, rng);
  p.gru.u_n = gaussian_matrix(dim, dim, sd, rng);
  p.gru.b_r = p.gru.b_z = p.gru.b_n = Vector(dim, 0.0);
  p.prior_mean = Vector(dim, 0.0);
  p.prior_log_std = Vector(dim, std::log(sd));
  p.iterations = iterations;
  return p;
}

SlotAttentionParams oracle_params(std::size_t dim, double sharpness, int iterations, double prior_std) {
  const double g = std::sqrt(sharpness * std::sqrt(static_cast<double>(dim)));
  SlotAttentionParams p;
  p.w_q = Matrix::identity(dim) * g;
  p.w_k = Matrix::identity(dim) * g;
  p.w_v = Matrix::identity(dim);
  p.gru.w_r = p.gru.u_r = p.gru.w_z = p.gru.u_z = p.gru.u_n = Matrix(dim, dim);
  p.gru.w_n = Matrix::identity(dim);
  p.gru.b_r = Vector(dim, 0.0);
  p.gru.b_z = Vector(dim, -30.0);  // update gate closed: h' = n
  p.gru.b_n = Vector(dim, 0.0);
  p.prior_mean = Vector(dim, 0.0);
  p.prior_log_std = Vector(dim, std::log(prior_std));
  p.iterations = iterations;
  return p;
}

Matrix init_slots(const SlotAttentionParams& params, std::size_t num_slots, Rng& rng) {
  if (num_slots < 1) throw InvalidArgument("init_slots: K must be >= 1");
  const std::size_t d = params.dim();
  Matrix slots(num_slots, d);
  for (std::size_t k = 0; k < num_slots; ++k)
    for (std::size_t i = 0; i < d; ++i)
      slots(k, i) = params.prior_mean[i] + std::exp(params.prior_log_std[i]) * rng.normal();
  return slots;
}

SlotState attention_iteration(const SlotAttentionParams& params, const Matrix& slots, const PatchFeatures& features) {
  const std::size_t d = params.dim();
  if (slots.cols() != d || features.dim() != d) throw InvalidArgument("attention_iteration: dimension mismatch");
  const Matrix& f = features.tokens;
  const std::size_t k_slots = slots.rows();
  const std::size_t n = f.rows();

  const Matrix q = matmul_bt(slots, params.w_q);  // rows W_q s_k
  const Matrix keys = matmul_bt(f, params.w_k);   // rows W_k F_n
  const Matrix vals = matmul_bt(f, params.w_v);   // rows W_v F_n
  Matrix logits = matmul_bt(q, keys);
  logits *= 1.0 / std::sqrt(static_cast<double>(d));

  SlotState state;
  state.attn = softmax_columns(logits);
  state.slots = Matrix(k_slots, d);
  for (std::size_t k = 0; k < k_slots; ++k) {
    double mass = 0.0;
    for (std::size_t j = 0; j < n; ++j) mass += state.attn(k, j);
    Vector update(d, 0.0);
    if (mass >= 1e-12) {
      for (std::size_t j = 0; j < n; ++j) axpy(state.attn(k, j) / mass, vals.row(j), update);
    }
    state.slots.set_row(k, gru_cell(params.gru, update, slots.row(k)));
  }
  return state;
}

SlotState run_slot_attention_from(const SlotAttentionParams& params, const PatchFeatures& features, Matrix slots) {
  params.validate();
  SlotState state{std::move(slots), Matrix()};
  for (int it = 0; it < params.iterations; ++it) state = attention_iteration(params, state.slots, features);
  return state;
}

SlotState run_slot_attention(const SlotAttentionParams& params, const PatchFeatures& features, std::size_t num_slots,
                             Rng& rng) {
  return run_slot_attention_from(params, features, init_slots(params, num_slots, rng));
}

SlotAggregates aggregate_slots(const Matrix& attn, const PatchFeatures& features) {
  if (attn.cols() != features.num_patches()) throw InvalidArgument("aggregate_slots: attn columns must equal N");
  SlotAggregates out{Matrix(attn.rows(), features.dim()), std::vector<bool>(attn.rows(), false)};
  for (std::size_t k = 0; k < attn.rows(); ++k) {
    Vector acc(features.dim(), 0.0);
    for (std::size_t j = 0; j < attn.cols(); ++j) axpy(attn(k, j), features.tokens.row(j), acc);
    try {
      out.phi.set_row(k, l2_normalize(acc));
    } catch (const DegenerateVector&) {
      out.degenerate[k] = true;
    }
  }
  return out;
}

double slot_purity(const std::vector<Matrix>& attn_batch, const std::vector<std::vector<int>>& labels_batch) {
  if (attn_batch.empty()) throw InvalidArgument("slot_purity: empty batch");
  if (attn_batch.size() != labels_batch.size()) throw InvalidArgument("slot_purity: batch size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < attn_batch.size(); ++i) {
    const Matrix& a = attn_batch[i];
    const auto& labels = labels_batch[i];
    if (labels.size() != a.cols()) throw InvalidArgument("slot_purity: labels length must equal N");
    bool has_object = false;
    for (int c : labels) has_object |= (c != 0);
    if (!has_object) throw InvalidArgument("slot_purity: image has no non-background category");

    double image_score = 0.0;
    for (std::size_t k = 0; k < a.rows(); ++k) {
      std::map<int, double> mass;  // ordered: ties resolve to the lower id
      double slot_total = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) {
        mass[labels[j]] += a(k, j);
        slot_total += a(k, j);
      }
      double best = -1.0;
      for (const auto& [cat, m] : mass)
        if (m > best) best = m;
      if (best > 0.5 * slot_total) image_score += 1.0;
    }
    total += image_score / static_cast<double>(a.rows());
  }
  return total / static_cast<double>(attn_batch.size());
}

}  // namespace compose::slot
