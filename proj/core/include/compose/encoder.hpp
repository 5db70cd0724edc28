#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "compose/episode.hpp"
#include "compose/matrix.hpp"
#include "compose/rng.hpp"

namespace compose::enc {

// MLP router: omega_k = softmax_k(v . relu(W1 phi_k)).
struct RouterParams {
  Matrix w1;  // h x D
  Vector v;   // h
  std::size_t hidden_dim() const { return v.size(); }
};

// Shared projection head; tau = exp(log_tau).
struct ProjectionHead {
  Matrix w2;  // D x D
  double log_tau = 0.0;
  double tau() const;
};

// The trainable parameters.
struct EncoderParams {
  RouterParams router;
  ProjectionHead head;

  std::size_t dim() const { return head.w2.rows(); }
  std::size_t hidden_dim() const { return router.hidden_dim(); }
  void validate() const;
};

// W2 = I, tau = tau_init, W1 ~ N(0, 2/D), v ~ N(0, 1/h).
EncoderParams init_encoder(std::size_t dim, std::size_t hidden, double tau_init, Rng& rng);

struct SlotEmbeddings {
  Matrix y_raw;  // K x D, rows W2 phi_k
  Matrix z;      // K x D, unit rows
};

struct HolisticEmbedding {
  Vector u;  // router-weighted aggregate of y_raw rows
  Vector e;  // u / ||u||
};

struct Prototype {
  int class_id = 0;
  Vector p;
};

enum class DecorrelationKind { none, cross_correlation, vicreg_variance, spectral };

struct DecorrelationConfig {
  DecorrelationKind kind = DecorrelationKind::cross_correlation;
  double lambda_d = 0.02;
  double gamma_hinge = 1.0;  // VICReg only
  double std_floor = 1e-6;
};

// Full training objective:
//   (1 - ct_weight) * CE_hol + ct_weight * CE_chamfer + decorrelation.
// ct_weight = 0 is holistic training; > 0 is the Chamfer-trained variant.
struct ObjectiveConfig {
  DecorrelationConfig decor;
  double ct_weight = 0.0;
  std::size_t kappa = 4;
  bool prototype_stop_gradient = false;
};

Vector route(const RouterParams& router, const Matrix& phi);
SlotEmbeddings project_slots(const ProjectionHead& head, const Matrix& phi);
HolisticEmbedding holistic_embed(const ProjectionHead& head, std::span<const double> omega, const Matrix& phi);

std::vector<Prototype> compute_prototypes(const std::vector<std::pair<Vector, int>>& embeddings);

struct CeResult {
  double loss = 0.0;
  Matrix probs;  // queries x classes, classes in prototype order
};
CeResult ce_loss(const std::vector<Vector>& queries, const std::vector<int>& labels,
                 const std::vector<Prototype>& prototypes, double tau);

// Standardized (B*K) x D -> D x D correlation matrix.
Matrix correlation_matrix(const Matrix& y, double std_floor);
double decorrelation_loss(const DecorrelationConfig& cfg, const Matrix& y);
// d loss / d y, same shape as y.
Matrix decorrelation_grad(const DecorrelationConfig& cfg, const Matrix& y);
double off_diag_mean(const Matrix& c);
// ||(1/n) Y^T Y - I||_F^2 on the given rows (no centering).
double spectral_penalty(const Matrix& y);

// Per-image forward pass, cached for the backward pass.
struct ImageForward {
  Matrix phi;
  Matrix pre;  // K x h, W1 phi_k
  Vector omega;
  SlotEmbeddings emb;
  HolisticEmbedding hol;
};
ImageForward forward_image(const EncoderParams& params, const Matrix& phi);

// Centered top-kappa slot set of one image, with what the backward pass needs.
struct CenteredForward {
  Matrix w;                           // K x D, z_k - mean(z)
  Vector w_norms;                     // K
  std::vector<std::size_t> selected;  // source rows, by descending omega
  Matrix z_hat;                       // |selected| x D
};
CenteredForward centered_topk(const SlotEmbeddings& emb, std::span<const double> omega, std::size_t kappa);
// Pulls d/d z_hat (rows aligned with `selected`) back to d/d y_raw (K x D).
Matrix centered_backward(const CenteredForward& cf, const SlotEmbeddings& emb, const Matrix& grad_zhat);

struct EncoderGradients {
  Matrix w1;
  Vector v;
  Matrix w2;
  double log_tau = 0.0;
};

struct LossBreakdown {
  double ce = 0.0;     // holistic prototype CE
  double ct = 0.0;     // Chamfer CE (0 unless ct_weight > 0)
  double decor = 0.0;  // decorrelation term, lambda included
  double total = 0.0;
};

struct LossAndGrad {
  LossBreakdown loss;
  EncoderGradients grad;
};

LossBreakdown episode_loss(const EncoderParams& params, const Episode& episode, const ObjectiveConfig& cfg);
LossAndGrad encoder_gradients(const EncoderParams& params, const Episode& episode, const ObjectiveConfig& cfg);

// Chamfer CE alone: logits tau * s_Ch(q, c) on centered top-kappa slots.
double ct_loss(const EncoderParams& params, const Episode& episode, std::size_t kappa);

// Flat parameter vector [W1 | v | W2 | log_tau] for oracle checks.
Vector flatten(const EncoderParams& params);
EncoderParams unflatten(std::span<const double> flat, std::size_t dim, std::size_t hidden);
Vector flatten(const EncoderGradients& grad);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
};

struct TrainStepResult {
  EncoderParams params;
  AdamState state;
  LossBreakdown loss;
};

// One Adam update. Throws NumericError when the loss is not finite.
TrainStepResult train_step(const EncoderParams& params, const Episode& episode, const AdamState& state,
                           const ObjectiveConfig& cfg, const AdamConfig& adam);

}  // namespace compose::enc
