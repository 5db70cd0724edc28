#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "compose/encoder.hpp"
#include "compose/episode.hpp"
#include "compose/errors.hpp"
#include "compose/matrix.hpp"

namespace compose::match {

class EmptyAfterCentering : public Error {
 public:
  using Error::Error;
};

// Per-image centered slots: z_hat_k = normalize(z_k - mean_j z_j).
struct CenteredSlots {
  Matrix z_hat;                          // K' x D, unit rows
  std::vector<std::size_t> source_ids;   // original row of each z_hat row
  std::vector<std::size_t> dropped;      // rows equal to the mean
};

enum class MatcherKind { hard_chamfer, soft_chamfer, mutual_nn, sinkhorn, hungarian };

std::string to_string(MatcherKind kind);
MatcherKind matcher_kind_from_string(const std::string& name);

struct MatcherConfig {
  MatcherKind kind = MatcherKind::hard_chamfer;
  double beta = 20.0;      // soft Chamfer temperature
  double epsilon = 0.05;   // Sinkhorn regularization
  int max_iters = 1000;
  double tol = 1e-9;
  std::size_t kappa = 4;
  double gamma_blend = 0.3;

  void validate() const;
};

// Row-stochastic K_q x K_s coupling.
struct Coupling {
  Matrix t;
  MatcherKind kind = MatcherKind::hard_chamfer;
  bool converged = true;   // Sinkhorn only
  double residual = 0.0;   // Sinkhorn marginal residual at exit
  int iterations = 0;
};

CenteredSlots center_slots(const Matrix& z);

// S = A B^T for unit-row A, B.
Matrix cost_matrix(const Matrix& a, const Matrix& b);

Coupling make_coupling(const MatcherConfig& cfg, const Matrix& s);

// Log-domain Sinkhorn: rows sum to 1, columns to K_q / K_s.
Coupling sinkhorn(const Matrix& s, double epsilon, int max_iters, double tol);

// Exact maximum-weight perfect matching on a square matrix; result[k] is the
// column assigned to row k.
std::vector<std::size_t> hungarian_assignment(const Matrix& s);

// (1/K_q) sum_{k,k'} T_{k,k'} S_{k,k'}
double assignment_score(const Matrix& t, const Matrix& s);

// Indices of the kappa largest weights (descending, ties to lower index).
std::vector<std::size_t> select_topk(std::span<const double> omega, std::size_t kappa);

// Mean over query rows of the best cosine into the pool.
double forward_chamfer(const Matrix& query, const Matrix& pool);
// Bidirectional Chamfer on centered sets, range [-2, 2].
double chamfer_score(const CenteredSlots& query, const CenteredSlots& pool);
double chamfer_score(const Matrix& query, const Matrix& pool);

// Score and (sub)gradient of the bidirectional Chamfer score with respect to
// both unit-row sets, matched indices held fixed (ties to lowest index).
struct ChamferGrad {
  double score = 0.0;
  Matrix grad_query;
  Matrix grad_pool;
};
ChamferGrad chamfer_score_grad(const Matrix& query, const Matrix& pool);

// Symmetric assignment score s_T(A->B) + s_T'(B->A) for the configured matcher.
// With hard couplings this equals the bidirectional Chamfer score.
double bidirectional_assignment_score(const MatcherConfig& cfg, const Matrix& query, const Matrix& pool);

double blend_score(double s_hol, double s_ch, double gamma, double tau);

struct EpisodeResult {
  std::vector<int> class_ids;    // column order of the score tables
  std::vector<int> predictions;  // per query
  Matrix holistic;               // queries x classes, s_hol
  Matrix compositional;          // queries x classes, s_Ch (unscaled)
  Matrix blended;                // queries x classes
  std::size_t n_correct = 0;
};

// Inference: holistic prototypes + centered top-kappa matching, blended.
EpisodeResult classify_episode(const Episode& episode, const enc::EncoderParams& params, const MatcherConfig& cfg);

}  // namespace compose::match
