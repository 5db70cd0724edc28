#include "compose/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "compose/errors.hpp"
#include "compose/matchers.hpp"
#include "compose/numeric.hpp"

namespace compose::enc {

double ProjectionHead::tau() const { return std::exp(log_tau); }

void EncoderParams::validate() const {
  const std::size_t d = dim();
  const std::size_t h = hidden_dim();
  if (d == 0) throw InvalidArgument("encoder: D must be positive");
  if (h == 0) throw InvalidArgument("encoder: router hidden width must be >= 1");
  if (head.w2.cols() != d) throw InvalidArgument("encoder: W2 must be D x D");
  if (router.w1.rows() != h || router.w1.cols() != d) throw InvalidArgument("encoder: W1 must be h x D");
  if (!all_finite(head.w2) || !all_finite(router.w1) || !all_finite(std::span<const double>(router.v)) ||
      !std::isfinite(head.log_tau))
    throw NumericError("encoder: non-finite parameters");
}

EncoderParams init_encoder(std::size_t dim, std::size_t hidden, double tau_init, Rng& rng) {
  if (dim == 0 || hidden == 0) throw InvalidArgument("init_encoder: D and h must be positive");
  if (!(tau_init > 0.0)) throw InvalidArgument("init_encoder: tau_init must be > 0");
  EncoderParams p;
  p.router.w1 = gaussian_matrix(hidden, dim, std::sqrt(2.0 / static_cast<double>(dim)), rng);
  p.router.v.resize(hidden);
  const double sv = std::sqrt(1.0 / static_cast<double>(hidden));
  for (auto& x : p.router.v) x = sv * rng.normal();
  p.head.w2 = Matrix::identity(dim);
  p.head.log_tau = std::log(tau_init);
  return p;
}

namespace {

Vector router_logits(const RouterParams& router, const Matrix& phi, Matrix* pre_out) {
  const Matrix pre = matmul_bt(phi, router.w1);  // K x h
  Vector logits(phi.rows(), 0.0);
  for (std::size_t k = 0; k < phi.rows(); ++k)
    for (std::size_t j = 0; j < pre.cols(); ++j) logits[k] += router.v[j] * std::max(0.0, pre(k, j));
  if (pre_out) *pre_out = pre;
  return logits;
}

}  // namespace

Vector route(const RouterParams& router, const Matrix& phi) {
  if (phi.cols() != router.w1.cols()) throw InvalidArgument("route: phi width must equal D");
  return softmax(router_logits(router, phi, nullptr));
}

SlotEmbeddings project_slots(const ProjectionHead& head, const Matrix& phi) {
  SlotEmbeddings out;
  out.y_raw = matmul_bt(phi, head.w2);
  out.z = Matrix(phi.rows(), phi.cols());
  for (std::size_t k = 0; k < phi.rows(); ++k) {
    const double n = norm(out.y_raw.row(k));
    if (!(n > kNormEps)) throw DegenerateVector("project_slots: W2 annihilates slot " + std::to_string(k), k);
    for (std::size_t i = 0; i < phi.cols(); ++i) out.z(k, i) = out.y_raw(k, i) / n;
  }
  return out;
}

HolisticEmbedding holistic_embed(const ProjectionHead& head, std::span<const double> omega, const Matrix& phi) {
  if (omega.size() != phi.rows()) throw InvalidArgument("holistic_embed: omega length must equal K");
  Vector agg(phi.cols(), 0.0);
  for (std::size_t k = 0; k < phi.rows(); ++k) axpy(omega[k], phi.row(k), agg);
  HolisticEmbedding h;
  h.u = matvec(head.w2, agg);
  const double n = norm(h.u);
  if (!(n > kNormEps)) throw DegenerateVector("holistic_embed: ||u|| vanishes");
  h.e = scaled(h.u, 1.0 / n);
  return h;
}

std::vector<Prototype> compute_prototypes(const std::vector<std::pair<Vector, int>>& embeddings) {
  std::map<int, std::pair<Vector, std::size_t>> sums;
  for (const auto& [e, c] : embeddings) {
    auto& slot = sums[c];
    if (slot.first.empty()) slot.first.assign(e.size(), 0.0);
    if (slot.first.size() != e.size()) throw InvalidArgument("compute_prototypes: embedding width mismatch");
    axpy(1.0, e, slot.first);
    ++slot.second;
  }
  if (sums.empty()) throw InvalidArgument("compute_prototypes: no embeddings");
  std::vector<Prototype> out;
  for (const auto& [c, s] : sums) {
    const Vector mean = scaled(s.first, 1.0 / static_cast<double>(s.second));
    try {
      out.push_back({c, l2_normalize(mean)});
    } catch (const DegenerateVector&) {
      throw DegenerateVector("compute_prototypes: class " + std::to_string(c) + " has a zero mean embedding");
    }
  }
  return out;
}

CeResult ce_loss(const std::vector<Vector>& queries, const std::vector<int>& labels,
                 const std::vector<Prototype>& prototypes, double tau) {
  if (queries.size() != labels.size()) throw InvalidArgument("ce_loss: queries/labels length mismatch");
  if (queries.empty()) throw InvalidArgument("ce_loss: no queries");
  CeResult r;
  r.probs = Matrix(queries.size(), prototypes.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    Vector logits(prototypes.size());
    std::size_t target = prototypes.size();
    for (std::size_t c = 0; c < prototypes.size(); ++c) {
      logits[c] = tau * dot(queries[q], prototypes[c].p);
      if (prototypes[c].class_id == labels[q]) target = c;
    }
    if (target == prototypes.size())
      throw InvalidArgument("ce_loss: label " + std::to_string(labels[q]) + " has no prototype");
    r.loss += log_sum_exp(logits) - logits[target];
    const Vector p = softmax(logits);
    r.probs.set_row(q, p);
  }
  r.loss /= static_cast<double>(queries.size());
  return r;
}

// ---------------------------------------------------------------------------
// Decorrelation

namespace {

struct Standardized {
  Matrix y_hat;
  Vector sigma;  // population std
  Vector scale;  // max(sigma, floor)
};

Standardized standardize(const Matrix& y, double floor) {
  const std::size_t n = y.rows(), d = y.cols();
  if (n < 2) throw InvalidArgument("correlation_matrix: need at least 2 rows");
  Standardized s{Matrix(n, d), Vector(d), Vector(d)};
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += y(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (y(i, j) - mu) * (y(i, j) - mu);
    var /= static_cast<double>(n);
    s.sigma[j] = std::sqrt(var);
    s.scale[j] = std::max(s.sigma[j], floor);
    for (std::size_t i = 0; i < n; ++i) s.y_hat(i, j) = (y(i, j) - mu) / s.scale[j];
  }
  return s;
}

}  // namespace

Matrix correlation_matrix(const Matrix& y, double std_floor) {
  const Standardized s = standardize(y, std_floor);
  Matrix c = matmul_at(s.y_hat, s.y_hat);
  c *= 1.0 / static_cast<double>(y.rows());
  return c;
}

double spectral_penalty(const Matrix& y) {
  Matrix sigma = matmul_at(y, y);
  sigma *= 1.0 / static_cast<double>(y.rows());
  sigma -= Matrix::identity(y.cols());
  const double f = frobenius_norm(sigma);
  return f * f;
}

double off_diag_mean(const Matrix& c) {
  const std::size_t d = c.rows();
  if (d < 2 || c.cols() != d) throw InvalidArgument("off_diag_mean: need a square matrix with D >= 2");
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (i != j) acc += std::abs(c(i, j));
  return acc / static_cast<double>(d * (d - 1));
}

double decorrelation_loss(const DecorrelationConfig& cfg, const Matrix& y) {
  switch (cfg.kind) {
    case DecorrelationKind::none:
      return 0.0;
    case DecorrelationKind::cross_correlation: {
      const Matrix c = correlation_matrix(y, cfg.std_floor);
      const double off = off_diagonal_norm(c);
      return cfg.lambda_d * off * off;
    }
    case DecorrelationKind::vicreg_variance: {
      const Standardized s = standardize(y, cfg.std_floor);
      double acc = 0.0;
      for (double sd : s.sigma) acc += std::max(0.0, cfg.gamma_hinge - sd);
      return cfg.lambda_d * acc;
    }
    case DecorrelationKind::spectral:
      return cfg.lambda_d * spectral_penalty(y);
  }
  return 0.0;
}

Matrix decorrelation_grad(const DecorrelationConfig& cfg, const Matrix& y) {
  const std::size_t n = y.rows(), d = y.cols();
  const double nn = static_cast<double>(n);
  Matrix g(n, d);
  switch (cfg.kind) {
    case DecorrelationKind::none:
      return g;
    case DecorrelationKind::cross_correlation: {
      const Standardized s = standardize(y, cfg.std_floor);
      Matrix c = matmul_at(s.y_hat, s.y_hat);
      c *= 1.0 / nn;
      for (std::size_t i = 0; i < d; ++i) c(i, i) = 0.0;
      Matrix gh = matmul(s.y_hat, c);
      gh *= 4.0 * cfg.lambda_d / nn;
      // back through per-dimension standardization
      for (std::size_t j = 0; j < d; ++j) {
        double mg = 0.0, mgy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          mg += gh(i, j);
          mgy += gh(i, j) * s.y_hat(i, j);
        }
        mg /= nn;
        mgy /= nn;
        const bool floored = !(s.sigma[j] > cfg.std_floor);
        for (std::size_t i = 0; i < n; ++i) {
          const double centred = gh(i, j) - mg;
          g(i, j) = floored ? centred / s.scale[j] : (centred - s.y_hat(i, j) * mgy) / s.scale[j];
        }
      }
      return g;
    }
    case DecorrelationKind::vicreg_variance: {
      const Standardized s = standardize(y, cfg.std_floor);
      for (std::size_t j = 0; j < d; ++j) {
        if (!(s.sigma[j] < cfg.gamma_hinge)) continue;
        // d sigma / d y = (y - mu) / (n sigma); sigma is floored at zero spread
        for (std::size_t i = 0; i < n; ++i) g(i, j) = -cfg.lambda_d * s.y_hat(i, j) / nn;
      }
      return g;
    }
    case DecorrelationKind::spectral: {
      Matrix sigma = matmul_at(y, y);
      sigma *= 1.0 / nn;
      sigma -= Matrix::identity(d);
      g = matmul(y, sigma);
      g *= 4.0 * cfg.lambda_d / nn;
      return g;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Forward / backward

ImageForward forward_image(const EncoderParams& params, const Matrix& phi) {
  if (phi.cols() != params.dim()) throw InvalidArgument("forward_image: phi width must equal D");
  ImageForward f;
  f.phi = phi;
  f.omega = softmax(router_logits(params.router, phi, &f.pre));
  f.emb = project_slots(params.head, phi);
  f.hol = holistic_embed(params.head, f.omega, phi);
  return f;
}

CenteredForward centered_topk(const SlotEmbeddings& emb, std::span<const double> omega, std::size_t kappa) {
  const std::size_t k_slots = emb.z.rows(), d = emb.z.cols();
  if (omega.size() != k_slots) throw InvalidArgument("centered_topk: omega length must equal K");
  CenteredForward cf;
  Vector mean(d, 0.0);
  for (std::size_t k = 0; k < k_slots; ++k) axpy(1.0 / static_cast<double>(k_slots), emb.z.row(k), mean);
  cf.w = Matrix(k_slots, d);
  cf.w_norms.assign(k_slots, 0.0);
  std::vector<std::size_t> live;
  for (std::size_t k = 0; k < k_slots; ++k) {
    for (std::size_t i = 0; i < d; ++i) cf.w(k, i) = emb.z(k, i) - mean[i];
    cf.w_norms[k] = norm(cf.w.row(k));
    if (cf.w_norms[k] > kNormEps) live.push_back(k);
  }
  if (live.empty()) throw match::EmptyAfterCentering("centered_topk: all slots coincide with their mean");
  std::stable_sort(live.begin(), live.end(), [&](std::size_t a, std::size_t b) { return omega[a] > omega[b]; });
  live.resize(std::min(kappa, live.size()));
  cf.selected = live;
  cf.z_hat = Matrix(live.size(), d);
  for (std::size_t j = 0; j < live.size(); ++j)
    for (std::size_t i = 0; i < d; ++i) cf.z_hat(j, i) = cf.w(live[j], i) / cf.w_norms[live[j]];
  return cf;
}

Matrix centered_backward(const CenteredForward& cf, const SlotEmbeddings& emb, const Matrix& grad_zhat) {
  const std::size_t k_slots = emb.z.rows(), d = emb.z.cols();
  if (grad_zhat.rows() != cf.selected.size() || grad_zhat.cols() != d)
    throw InvalidArgument("centered_backward: gradient shape must match z_hat");
  Matrix gw(k_slots, d);
  for (std::size_t j = 0; j < cf.selected.size(); ++j) {
    const std::size_t k = cf.selected[j];
    const Vector t = tangent_project(cf.z_hat.row(j), grad_zhat.row(j));
    for (std::size_t i = 0; i < d; ++i) gw(k, i) = t[i] / cf.w_norms[k];
  }
  Vector gmean(d, 0.0);
  for (std::size_t k = 0; k < k_slots; ++k) axpy(1.0 / static_cast<double>(k_slots), gw.row(k), gmean);
  Matrix gy(k_slots, d);
  for (std::size_t k = 0; k < k_slots; ++k) {
    const Vector gz = sub(gw.row(k), gmean);
    const Vector t = tangent_project(emb.z.row(k), gz);
    const double yn = norm(emb.y_raw.row(k));
    for (std::size_t i = 0; i < d; ++i) gy(k, i) = t[i] / yn;
  }
  return gy;
}

namespace {

struct ImageGrad {
  Vector de;  // d loss / d e
  Matrix gy;  // d loss / d y_raw (direct contributions)
};

// Pulls d/d e and d/d y_raw of one image back onto the parameters.
void backprop_image(const EncoderParams& params, const ImageForward& f, const ImageGrad& g, EncoderGradients& out) {
  const std::size_t k_slots = f.phi.rows(), d = f.phi.cols(), h = params.hidden_dim();
  Matrix gy = g.gy;
  Vector gomega(k_slots, 0.0);
  if (!g.de.empty()) {
    const double un = norm(f.hol.u);
    const Vector du = scaled(tangent_project(f.hol.e, g.de), 1.0 / un);
    for (std::size_t k = 0; k < k_slots; ++k) {
      axpy(f.omega[k], du, gy.row(k));
      gomega[k] = dot(du, f.emb.y_raw.row(k));
    }
  }
  const double avg = std::inner_product(f.omega.begin(), f.omega.end(), gomega.begin(), 0.0);
  for (std::size_t k = 0; k < k_slots; ++k) {
    const double dlogit = f.omega[k] * (gomega[k] - avg);
    if (dlogit != 0.0) {
      for (std::size_t j = 0; j < h; ++j) {
        if (!(f.pre(k, j) > 0.0)) continue;
        out.v[j] += dlogit * f.pre(k, j);
        const double dpre = dlogit * params.router.v[j];
        for (std::size_t i = 0; i < d; ++i) out.w1(j, i) += dpre * f.phi(k, i);
      }
    }
    add_outer(out.w2, 1.0, gy.row(k), f.phi.row(k));
  }
}

LossAndGrad evaluate(const EncoderParams& params, const Episode& episode, const ObjectiveConfig& cfg, bool want_grad) {
  params.validate();
  episode.validate();
  if (episode.query.empty()) throw InvalidArgument("encoder: episode has no queries");
  if (cfg.ct_weight < 0.0 || cfg.ct_weight > 1.0) throw InvalidArgument("encoder: ct_weight must lie in [0, 1]");

  const std::size_t d = params.dim(), h = params.hidden_dim();
  const std::size_t n_s = episode.support.size(), n_q = episode.query.size();
  const std::vector<int> classes = episode.classes();
  const std::size_t n_c = classes.size();
  auto class_index = [&](int label) {
    return static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), label) - classes.begin());
  };
  const double tau = params.head.tau();
  const double w_ct = cfg.ct_weight;
  const double nq = static_cast<double>(n_q);

  std::vector<ImageForward> fs, fq;
  fs.reserve(n_s);
  fq.reserve(n_q);
  for (const auto& s : episode.support) fs.push_back(forward_image(params, s.phi));
  for (const auto& q : episode.query) fq.push_back(forward_image(params, q.phi));

  std::vector<ImageGrad> gs(n_s), gq(n_q);
  for (auto& g : gs) g = {Vector(d, 0.0), Matrix(fs.front().phi.rows(), d)};
  for (auto& g : gq) g = {Vector(d, 0.0), Matrix(fs.front().phi.rows(), d)};

  LossAndGrad out;
  out.grad = {Matrix(h, d), Vector(h, 0.0), Matrix(d, d), 0.0};

  // prototypes
  std::vector<Vector> m(n_c, Vector(d, 0.0));
  std::vector<std::size_t> count(n_c, 0);
  for (std::size_t i = 0; i < n_s; ++i) {
    const std::size_t c = class_index(episode.support[i].label);
    axpy(1.0, fs[i].hol.e, m[c]);
    ++count[c];
  }
  std::vector<Vector> protos(n_c);
  std::vector<double> m_norm(n_c);
  for (std::size_t c = 0; c < n_c; ++c) {
    for (auto& x : m[c]) x /= static_cast<double>(count[c]);
    m_norm[c] = norm(m[c]);
    if (!(m_norm[c] > kNormEps))
      throw DegenerateVector("encoder: prototype of class " + std::to_string(classes[c]) + " vanishes");
    protos[c] = scaled(m[c], 1.0 / m_norm[c]);
  }

  // holistic CE
  std::vector<Vector> dproto(n_c, Vector(d, 0.0));
  for (std::size_t q = 0; q < n_q; ++q) {
    Vector logits(n_c);
    for (std::size_t c = 0; c < n_c; ++c) logits[c] = tau * dot(fq[q].hol.e, protos[c]);
    const std::size_t y = class_index(episode.query[q].label);
    out.loss.ce += (log_sum_exp(logits) - logits[y]) / nq;
    if (!want_grad || w_ct >= 1.0) continue;
    const Vector p = softmax(logits);
    for (std::size_t c = 0; c < n_c; ++c) {
      const double dl = (1.0 - w_ct) * (p[c] - (c == y ? 1.0 : 0.0)) / nq;
      axpy(dl * tau, protos[c], gq[q].de);
      axpy(dl * tau, fq[q].hol.e, dproto[c]);
      out.grad.log_tau += dl * logits[c];
    }
  }
  if (want_grad && !cfg.prototype_stop_gradient) {
    for (std::size_t c = 0; c < n_c; ++c) {
      const Vector dm = scaled(tangent_project(protos[c], dproto[c]), 1.0 / m_norm[c]);
      for (std::size_t i = 0; i < n_s; ++i)
        if (class_index(episode.support[i].label) == c) axpy(1.0 / static_cast<double>(count[c]), dm, gs[i].de);
    }
  }

  // Chamfer CE on centered top-kappa slots
  if (w_ct > 0.0) {
    std::vector<CenteredForward> cs(n_s), cq(n_q);
    for (std::size_t i = 0; i < n_s; ++i) cs[i] = centered_topk(fs[i].emb, fs[i].omega, cfg.kappa);
    for (std::size_t q = 0; q < n_q; ++q) cq[q] = centered_topk(fq[q].emb, fq[q].omega, cfg.kappa);

    struct Pool {
      Matrix rows;
      std::vector<std::pair<std::size_t, std::size_t>> owner;  // (support image, z_hat row)
    };
    std::vector<Pool> pools(n_c);
    for (std::size_t c = 0; c < n_c; ++c) {
      std::vector<Vector> rows;
      for (std::size_t i = 0; i < n_s; ++i) {
        if (class_index(episode.support[i].label) != c) continue;
        for (std::size_t j = 0; j < cs[i].z_hat.rows(); ++j) {
          rows.push_back(cs[i].z_hat.row_vector(j));
          pools[c].owner.emplace_back(i, j);
        }
      }
      pools[c].rows = Matrix::from_rows(rows);
    }

    std::vector<Matrix> gzs(n_s), gzq(n_q);
    for (std::size_t i = 0; i < n_s; ++i) gzs[i] = Matrix(cs[i].z_hat.rows(), d);
    for (std::size_t q = 0; q < n_q; ++q) gzq[q] = Matrix(cq[q].z_hat.rows(), d);

    for (std::size_t q = 0; q < n_q; ++q) {
      std::vector<match::ChamferGrad> cg(n_c);
      Vector logits(n_c);
      for (std::size_t c = 0; c < n_c; ++c) {
        cg[c] = match::chamfer_score_grad(cq[q].z_hat, pools[c].rows);
        logits[c] = tau * cg[c].score;
      }
      const std::size_t y = class_index(episode.query[q].label);
      out.loss.ct += (log_sum_exp(logits) - logits[y]) / nq;
      if (!want_grad) continue;
      const Vector p = softmax(logits);
      for (std::size_t c = 0; c < n_c; ++c) {
        const double dl = w_ct * (p[c] - (c == y ? 1.0 : 0.0)) / nq;
        out.grad.log_tau += dl * logits[c];
        const double ds = dl * tau;
        gzq[q] += cg[c].grad_query * ds;
        for (std::size_t r = 0; r < pools[c].owner.size(); ++r) {
          const auto [i, j] = pools[c].owner[r];
          axpy(ds, cg[c].grad_pool.row(r), gzs[i].row(j));
        }
      }
    }
    if (want_grad) {
      for (std::size_t i = 0; i < n_s; ++i) gs[i].gy += centered_backward(cs[i], fs[i].emb, gzs[i]);
      for (std::size_t q = 0; q < n_q; ++q) gq[q].gy += centered_backward(cq[q], fq[q].emb, gzq[q]);
    }
  }

  // decorrelation over every slot of the episode, supports first
  if (cfg.decor.kind != DecorrelationKind::none) {
    const std::size_t k_slots = fs.front().phi.rows();
    Matrix y((n_s + n_q) * k_slots, d);
    std::size_t r = 0;
    for (const auto* group : {&fs, &fq})
      for (const auto& f : *group)
        for (std::size_t k = 0; k < k_slots; ++k) y.set_row(r++, f.emb.y_raw.row(k));
    out.loss.decor = decorrelation_loss(cfg.decor, y);
    if (want_grad) {
      const Matrix gy = decorrelation_grad(cfg.decor, y);
      r = 0;
      for (auto* group : {&gs, &gq})
        for (auto& g : *group)
          for (std::size_t k = 0; k < k_slots; ++k) axpy(1.0, gy.row(r++), g.gy.row(k));
    }
  }

  out.loss.total = (1.0 - w_ct) * out.loss.ce + w_ct * out.loss.ct + out.loss.decor;
  if (want_grad) {
    for (std::size_t i = 0; i < n_s; ++i) backprop_image(params, fs[i], gs[i], out.grad);
    for (std::size_t q = 0; q < n_q; ++q) backprop_image(params, fq[q], gq[q], out.grad);
  }
  return out;
}

}  // namespace

LossBreakdown episode_loss(const EncoderParams& params, const Episode& episode, const ObjectiveConfig& cfg) {
  return evaluate(params, episode, cfg, false).loss;
}

LossAndGrad encoder_gradients(const EncoderParams& params, const Episode& episode, const ObjectiveConfig& cfg) {
  return evaluate(params, episode, cfg, true);
}

double ct_loss(const EncoderParams& params, const Episode& episode, std::size_t kappa) {
  ObjectiveConfig cfg;
  cfg.decor.kind = DecorrelationKind::none;
  cfg.ct_weight = 1.0;
  cfg.kappa = kappa;
  return evaluate(params, episode, cfg, false).loss.ct;
}

// ---------------------------------------------------------------------------
// Flat views and optimizer

Vector flatten(const EncoderParams& params) {
  Vector flat;
  flat.reserve(params.router.w1.size() + params.router.v.size() + params.head.w2.size() + 1);
  flat.insert(flat.end(), params.router.w1.storage().begin(), params.router.w1.storage().end());
  flat.insert(flat.end(), params.router.v.begin(), params.router.v.end());
  flat.insert(flat.end(), params.head.w2.storage().begin(), params.head.w2.storage().end());
  flat.push_back(params.head.log_tau);
  return flat;
}

EncoderParams unflatten(std::span<const double> flat, std::size_t dim, std::size_t hidden) {
  const std::size_t expected = hidden * dim + hidden + dim * dim + 1;
  if (flat.size() != expected) throw InvalidArgument("unflatten: wrong parameter count");
  EncoderParams p;
  auto it = flat.begin();
  p.router.w1 = Matrix(hidden, dim, Vector(it, it + static_cast<std::ptrdiff_t>(hidden * dim)));
  it += static_cast<std::ptrdiff_t>(hidden * dim);
  p.router.v.assign(it, it + static_cast<std::ptrdiff_t>(hidden));
  it += static_cast<std::ptrdiff_t>(hidden);
  p.head.w2 = Matrix(dim, dim, Vector(it, it + static_cast<std::ptrdiff_t>(dim * dim)));
  it += static_cast<std::ptrdiff_t>(dim * dim);
  p.head.log_tau = *it;
  return p;
}

Vector flatten(const EncoderGradients& grad) {
  Vector flat;
  flat.insert(flat.end(), grad.w1.storage().begin(), grad.w1.storage().end());
  flat.insert(flat.end(), grad.v.begin(), grad.v.end());
  flat.insert(flat.end(), grad.w2.storage().begin(), grad.w2.storage().end());
  flat.push_back(grad.log_tau);
  return flat;
}

TrainStepResult train_step(const EncoderParams& params, const Episode& episode, const AdamState& state,
                           const ObjectiveConfig& cfg, const AdamConfig& adam) {
  const LossAndGrad lg = encoder_gradients(params, episode, cfg);
  if (!std::isfinite(lg.loss.total))
    throw NumericError("train_step: non-finite loss (ce=" + std::to_string(lg.loss.ce) +
                       ", ct=" + std::to_string(lg.loss.ct) + ", decor=" + std::to_string(lg.loss.decor) + ")");
  const Vector g = flatten(lg.grad);
  if (!all_finite(std::span<const double>(g))) throw NumericError("train_step: non-finite gradient");

  Vector x = flatten(params);
  TrainStepResult r;
  r.state = state;
  if (r.state.m.empty()) {
    r.state.m.assign(x.size(), 0.0);
    r.state.v.assign(x.size(), 0.0);
  }
  if (r.state.m.size() != x.size()) throw InvalidArgument("train_step: optimizer state size mismatch");
  r.state.step += 1;
  const double b1t = 1.0 - std::pow(adam.beta1, static_cast<double>(r.state.step));
  const double b2t = 1.0 - std::pow(adam.beta2, static_cast<double>(r.state.step));
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.state.m[i] = adam.beta1 * r.state.m[i] + (1.0 - adam.beta1) * g[i];
    r.state.v[i] = adam.beta2 * r.state.v[i] + (1.0 - adam.beta2) * g[i] * g[i];
    const double mh = r.state.m[i] / b1t;
    const double vh = r.state.v[i] / b2t;
    x[i] -= adam.lr * mh / (std::sqrt(vh) + adam.eps);
  }
  r.params = unflatten(x, params.dim(), params.hidden_dim());
  r.loss = lg.loss;
  return r;
}

}  // namespace compose::enc
