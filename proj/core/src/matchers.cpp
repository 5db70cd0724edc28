#include "compose/matchers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "compose/numeric.hpp"

namespace compose::match {

std::string to_string(MatcherKind kind) {
  switch (kind) {
    case MatcherKind::hard_chamfer: return "hard_chamfer";
    case MatcherKind::soft_chamfer: return "soft_chamfer";
    case MatcherKind::mutual_nn: return "mutual_nn";
    case MatcherKind::sinkhorn: return "sinkhorn";
    case MatcherKind::hungarian: return "hungarian";
  }
  return "unknown";
}

MatcherKind matcher_kind_from_string(const std::string& name) {
  for (auto k : {MatcherKind::hard_chamfer, MatcherKind::soft_chamfer, MatcherKind::mutual_nn, MatcherKind::sinkhorn,
                 MatcherKind::hungarian})
    if (to_string(k) == name) return k;
  throw InvalidArgument("unknown matcher kind '" + name + "'");
}

void MatcherConfig::validate() const {
  if (kappa < 1) throw InvalidArgument("matcher: kappa must be >= 1");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw InvalidArgument("matcher: beta must be finite and >= 0");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("matcher: epsilon must be > 0");
  if (max_iters < 1) throw InvalidArgument("matcher: max_iters must be >= 1");
  if (!(tol > 0.0)) throw InvalidArgument("matcher: tol must be > 0");
  if (!(gamma_blend >= 0.0 && gamma_blend <= 1.0)) throw InvalidArgument("matcher: gamma_blend must lie in [0, 1]");
}

CenteredSlots center_slots(const Matrix& z) {
  const std::size_t k_slots = z.rows(), d = z.cols();
  if (k_slots < 2) throw InvalidArgument("center_slots: need K >= 2");
  Vector mean(d, 0.0);
  for (std::size_t k = 0; k < k_slots; ++k) axpy(1.0 / static_cast<double>(k_slots), z.row(k), mean);
  CenteredSlots out;
  std::vector<Vector> rows;
  for (std::size_t k = 0; k < k_slots; ++k) {
    const Vector w = sub(z.row(k), mean);
    const double n = norm(w);
    if (n > kNormEps) {
      rows.push_back(scaled(w, 1.0 / n));
      out.source_ids.push_back(k);
    } else {
      out.dropped.push_back(k);
    }
  }
  if (rows.empty()) throw EmptyAfterCentering("center_slots: all slot rows are identical");
  out.z_hat = Matrix::from_rows(rows);
  return out;
}

Matrix cost_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("cost_matrix: width mismatch");
  return matmul_bt(a, b);
}

namespace {

std::size_t row_argmax(const Matrix& s, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < s.cols(); ++j)
    if (s(r, j) > s(r, best)) best = j;
  return best;
}

std::size_t col_argmax(const Matrix& s, std::size_t c) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.rows(); ++i)
    if (s(i, c) > s(best, c)) best = i;
  return best;
}

void require_usable(const Matrix& s) {
  if (s.rows() == 0 || s.cols() == 0) throw InvalidArgument("coupling: empty cost matrix");
  if (!all_finite(s)) throw NumericError("coupling: non-finite cost matrix");
}

Matrix hard_coupling(const Matrix& s) {
  Matrix t(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) t(i, row_argmax(s, i)) = 1.0;
  return t;
}

// A row's only possible mutual partner is its own row argmax, and rows without
// one fall back to that same column, so the coupling coincides with hard.
Matrix mutual_nn_coupling(const Matrix& s) { return hard_coupling(s); }

}  // namespace

Coupling sinkhorn(const Matrix& s, double epsilon, int max_iters, double tol) {
  require_usable(s);
  if (!(epsilon > 0.0)) throw InvalidArgument("sinkhorn: epsilon must be > 0");
  const std::size_t m = s.rows(), n = s.cols();
  const double log_col_target = std::log(static_cast<double>(m) / static_cast<double>(n));
  Matrix logk = s * (1.0 / epsilon);
  Vector log_u(m, 0.0), log_v(n, 0.0), buf;

  auto update_rows = [&] {
    buf.resize(n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) buf[j] = logk(i, j) + log_v[j];
      log_u[i] = -log_sum_exp(buf);
    }
  };
  auto update_cols = [&] {
    buf.resize(m);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) buf[i] = logk(i, j) + log_u[i];
      log_v[j] = log_col_target - log_sum_exp(buf);
    }
  };
  auto col_residual = [&] {
    double worst = 0.0;
    const double target = std::exp(log_col_target);
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += std::exp(logk(i, j) + log_u[i] + log_v[j]);
      worst = std::max(worst, std::abs(acc - target));
    }
    return worst;
  };

  Coupling c;
  c.kind = MatcherKind::sinkhorn;
  c.converged = false;
  update_rows();
  for (int it = 1; it <= max_iters; ++it) {
    update_cols();
    update_rows();  // rows last: T is exactly row-stochastic on exit
    c.iterations = it;
    c.residual = col_residual();
    if (c.residual <= tol) {
      c.converged = true;
      break;
    }
  }
  c.t = Matrix(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c.t(i, j) = std::exp(logk(i, j) + log_u[i] + log_v[j]);
  return c;
}

std::vector<std::size_t> hungarian_assignment(const Matrix& s) {
  require_usable(s);
  const std::size_t n = s.rows();
  if (s.cols() != n) throw InvalidArgument("hungarian: cost matrix must be square");
  // Kuhn-Munkres with potentials, minimizing -S; 1-based with a sentinel column 0.
  const double inf = std::numeric_limits<double>::infinity();
  Vector u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    Vector minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -s(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

Coupling make_coupling(const MatcherConfig& cfg, const Matrix& s) {
  require_usable(s);
  Coupling c;
  c.kind = cfg.kind;
  switch (cfg.kind) {
    case MatcherKind::hard_chamfer:
      c.t = hard_coupling(s);
      break;
    case MatcherKind::soft_chamfer:
      c.t = softmax_rows(s * cfg.beta);
      break;
    case MatcherKind::mutual_nn:
      c.t = mutual_nn_coupling(s);
      break;
    case MatcherKind::sinkhorn:
      return sinkhorn(s, cfg.epsilon, cfg.max_iters, cfg.tol);
    case MatcherKind::hungarian: {
      const auto assign = hungarian_assignment(s);
      c.t = Matrix(s.rows(), s.cols());
      for (std::size_t i = 0; i < assign.size(); ++i) c.t(i, assign[i]) = 1.0;
      break;
    }
  }
  return c;
}

double assignment_score(const Matrix& t, const Matrix& s) {
  if (t.rows() != s.rows() || t.cols() != s.cols()) throw InvalidArgument("assignment_score: shape mismatch");
  if (s.rows() == 0) throw InvalidArgument("assignment_score: empty coupling");
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) acc += t.data()[i] * s.data()[i];
  return acc / static_cast<double>(s.rows());
}

std::vector<std::size_t> select_topk(std::span<const double> omega, std::size_t kappa) {
  if (kappa < 1) throw InvalidArgument("select_topk: kappa must be >= 1");
  std::vector<std::size_t> idx(omega.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return omega[a] > omega[b]; });
  idx.resize(std::min(kappa, idx.size()));
  return idx;
}

double forward_chamfer(const Matrix& query, const Matrix& pool) {
  if (query.rows() == 0 || pool.rows() == 0) throw InvalidArgument("chamfer: empty slot set");
  const Matrix s = cost_matrix(query, pool);
  double acc = 0.0;
  for (std::size_t i = 0; i < s.rows(); ++i) acc += s(i, row_argmax(s, i));
  return acc / static_cast<double>(s.rows());
}

double chamfer_score(const Matrix& query, const Matrix& pool) {
  return forward_chamfer(query, pool) + forward_chamfer(pool, query);
}

double chamfer_score(const CenteredSlots& query, const CenteredSlots& pool) {
  return chamfer_score(query.z_hat, pool.z_hat);
}

ChamferGrad chamfer_score_grad(const Matrix& query, const Matrix& pool) {
  if (query.rows() == 0 || pool.rows() == 0) throw InvalidArgument("chamfer: empty slot set");
  const Matrix s = cost_matrix(query, pool);
  ChamferGrad g{0.0, Matrix(query.rows(), query.cols()), Matrix(pool.rows(), pool.cols())};
  const double fq = 1.0 / static_cast<double>(query.rows());
  const double fp = 1.0 / static_cast<double>(pool.rows());
  for (std::size_t i = 0; i < query.rows(); ++i) {
    const std::size_t j = row_argmax(s, i);
    g.score += fq * s(i, j);
    axpy(fq, pool.row(j), g.grad_query.row(i));
    axpy(fq, query.row(i), g.grad_pool.row(j));
  }
  for (std::size_t j = 0; j < pool.rows(); ++j) {
    const std::size_t i = col_argmax(s, j);
    g.score += fp * s(i, j);
    axpy(fp, query.row(i), g.grad_pool.row(j));
    axpy(fp, pool.row(j), g.grad_query.row(i));
  }
  return g;
}

double bidirectional_assignment_score(const MatcherConfig& cfg, const Matrix& query, const Matrix& pool) {
  if (query.rows() == 0 || pool.rows() == 0) throw InvalidArgument("assignment: empty slot set");
  const Matrix s = cost_matrix(query, pool);
  const Matrix st = s.transpose();
  return assignment_score(make_coupling(cfg, s).t, s) + assignment_score(make_coupling(cfg, st).t, st);
}

double blend_score(double s_hol, double s_ch, double gamma, double tau) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("blend_score: gamma must lie in [0, 1]");
  return gamma * s_hol + (1.0 - gamma) * tau * s_ch;
}

EpisodeResult classify_episode(const Episode& episode, const enc::EncoderParams& params, const MatcherConfig& cfg) {
  cfg.validate();
  params.validate();
  episode.validate();
  const double tau = params.head.tau();

  EpisodeResult r;
  r.class_ids = episode.classes();
  const std::size_t n_c = r.class_ids.size(), n_q = episode.query.size();

  std::vector<std::pair<Vector, int>> support_e;
  std::vector<enc::CenteredForward> support_c;
  for (const auto& s : episode.support) {
    const enc::ImageForward f = enc::forward_image(params, s.phi);
    support_e.emplace_back(f.hol.e, s.label);
    support_c.push_back(enc::centered_topk(f.emb, f.omega, cfg.kappa));
  }
  const auto protos = enc::compute_prototypes(support_e);

  // class pools: union of the top-kappa centered slots of every support image
  std::vector<Matrix> pools(n_c);
  std::vector<std::vector<std::size_t>> members(n_c);
  for (std::size_t c = 0; c < n_c; ++c) {
    std::vector<Vector> rows;
    for (std::size_t i = 0; i < episode.support.size(); ++i) {
      if (episode.support[i].label != r.class_ids[c]) continue;
      members[c].push_back(i);
      for (std::size_t j = 0; j < support_c[i].z_hat.rows(); ++j) rows.push_back(support_c[i].z_hat.row_vector(j));
    }
    pools[c] = Matrix::from_rows(rows);
  }

  MatcherConfig hard_cfg = cfg;
  hard_cfg.kind = MatcherKind::hard_chamfer;

  r.holistic = Matrix(n_q, n_c);
  r.compositional = Matrix(n_q, n_c);
  r.blended = Matrix(n_q, n_c);
  r.predictions.resize(n_q);
  for (std::size_t q = 0; q < n_q; ++q) {
    const enc::ImageForward f = enc::forward_image(params, episode.query[q].phi);
    const Matrix zq = enc::centered_topk(f.emb, f.omega, cfg.kappa).z_hat;
    std::size_t best = 0;
    for (std::size_t c = 0; c < n_c; ++c) {
      const double s_hol = tau * dot(f.hol.e, protos[c].p);
      double s_ch = 0.0;
      switch (cfg.kind) {
        case MatcherKind::hard_chamfer:
          s_ch = chamfer_score(zq, pools[c]);
          break;
        case MatcherKind::hungarian:
          // a permutation needs square blocks: match against each support image separately
          for (std::size_t i : members[c]) {
            const Matrix& zs = support_c[i].z_hat;
            s_ch += bidirectional_assignment_score(zs.rows() == zq.rows() ? cfg : hard_cfg, zq, zs);
          }
          s_ch /= static_cast<double>(members[c].size());
          break;
        default:
          s_ch = bidirectional_assignment_score(cfg, zq, pools[c]);
      }
      r.holistic(q, c) = s_hol;
      r.compositional(q, c) = s_ch;
      r.blended(q, c) = blend_score(s_hol, s_ch, cfg.gamma_blend, tau);
      if (r.blended(q, c) > r.blended(q, best)) best = c;
    }
    r.predictions[q] = r.class_ids[best];
    if (r.predictions[q] == episode.query[q].label) ++r.n_correct;
  }
  return r;
}

}  // namespace compose::match
