#include "compose/gradient_lab.hpp"

#include <algorithm>
#include <cmath>

#include "compose/errors.hpp"
#include "compose/numeric.hpp"

namespace compose::lab {

GradientField holistic_grad(const enc::HolisticEmbedding& hol, std::span<const double> omega,
                            std::span<const double> p_c, const enc::SlotEmbeddings& emb, Reference reference) {
  const std::size_t k_slots = emb.z.rows(), d = emb.z.cols();
  if (omega.size() != k_slots || p_c.size() != d || hol.e.size() != d)
    throw InvalidArgument("holistic_grad: shape mismatch");
  const double un = norm(hol.u);
  const Vector t = tangent_project(hol.e, p_c);
  GradientField g{Matrix(k_slots, d), reference};
  for (std::size_t k = 0; k < k_slots; ++k) {
    if (reference == Reference::raw_projection) {
      axpy(omega[k] / un, t, g.per_slot.row(k));
    } else {
      const double scale = omega[k] * norm(emb.y_raw.row(k)) / un;
      axpy(scale, tangent_project(emb.z.row(k), t), g.per_slot.row(k));
    }
  }
  return g;
}

GradientField chamfer_grad(const Matrix& z_q, const Matrix& z_c) {
  if (z_q.rows() == 0 || z_c.rows() == 0) throw InvalidArgument("chamfer_grad: empty slot set");
  const Matrix s = match::cost_matrix(z_q, z_c);
  const Matrix t = match::make_coupling(match::MatcherConfig{}, s).t;
  GradientField g{Matrix(z_q.rows(), z_q.cols()), Reference::unit_embedding};
  const double inv_k = 1.0 / static_cast<double>(z_q.rows());
  for (std::size_t k = 0; k < z_q.rows(); ++k) {
    std::size_t best = 0;
    while (t(k, best) == 0.0) ++best;
    axpy(inv_k, tangent_project(z_q.row(k), z_c.row(best)), g.per_slot.row(k));
  }
  return g;
}

namespace {

Matrix normalize_rows(const Matrix& y) {
  Matrix z(y.rows(), y.cols());
  for (std::size_t k = 0; k < y.rows(); ++k) z.set_row(k, l2_normalize(y.row(k)));
  return z;
}

}  // namespace

GradientField assignment_grad(const match::MatcherConfig& cfg, const Matrix& t, const Matrix& z_q, const Matrix& z_c,
                              AssignmentMode mode, double fd_step) {
  const std::size_t k_slots = z_q.rows(), d = z_q.cols();
  if (t.rows() != k_slots || t.cols() != z_c.rows()) throw InvalidArgument("assignment_grad: coupling shape mismatch");
  GradientField g{Matrix(k_slots, d), Reference::unit_embedding};
  const double inv_k = 1.0 / static_cast<double>(k_slots);
  for (std::size_t k = 0; k < k_slots; ++k) {
    Vector target(d, 0.0);
    for (std::size_t j = 0; j < z_c.rows(); ++j) axpy(t(k, j), z_c.row(j), target);
    axpy(inv_k, tangent_project(z_q.row(k), target), g.per_slot.row(k));
  }
  if (mode == AssignmentMode::direct) return g;

  // Full derivative of the re-solved score on the sphere; the direct part is
  // then replaced by the exact total.
  const ScalarFn score = [&](std::span<const double> flat) {
    const Matrix z = normalize_rows(Matrix(k_slots, d, Vector(flat.begin(), flat.end())));
    const Matrix s = match::cost_matrix(z, z_c);
    return match::assignment_score(match::make_coupling(cfg, s).t, s);
  };
  const Vector total = finite_diff_gradient(score, z_q.storage(), fd_step);
  g.per_slot = Matrix(k_slots, d, total);
  return g;
}

GradientField to_unit_reference(const Matrix& grad_y, const enc::SlotEmbeddings& emb) {
  if (grad_y.rows() != emb.z.rows() || grad_y.cols() != emb.z.cols())
    throw InvalidArgument("to_unit_reference: shape mismatch");
  GradientField g{Matrix(grad_y.rows(), grad_y.cols()), Reference::unit_embedding};
  for (std::size_t k = 0; k < grad_y.rows(); ++k)
    axpy(norm(emb.y_raw.row(k)), tangent_project(emb.z.row(k), grad_y.row(k)), g.per_slot.row(k));
  return g;
}

AlignmentReport alignment_of_fields(const std::vector<GradientField>& fields) {
  if (fields.empty()) throw InvalidArgument("alignment: no gradient fields");
  const std::size_t k_slots = fields.front().per_slot.rows();
  AlignmentReport r;
  r.field_count = fields.size();
  r.pairwise = Matrix(k_slots, k_slots);
  Matrix counts(k_slots, k_slots);
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& f : fields) {
    if (f.per_slot.rows() != k_slots) throw InvalidArgument("alignment: fields differ in slot count");
    Vector norms(k_slots);
    for (std::size_t k = 0; k < k_slots; ++k) norms[k] = norm(f.per_slot.row(k));
    for (std::size_t a = 0; a < k_slots; ++a) {
      for (std::size_t b = a + 1; b < k_slots; ++b) {
        if (!(norms[a] > 0.0) || !(norms[b] > 0.0)) {
          ++r.skipped_pairs;
          continue;
        }
        const double c = dot(f.per_slot.row(a), f.per_slot.row(b)) / (norms[a] * norms[b]);
        r.pairwise(a, b) += c;
        r.pairwise(b, a) += c;
        counts(a, b) += 1.0;
        counts(b, a) += 1.0;
        total += c;
        ++used;
      }
    }
  }
  if (used == 0) throw InvalidArgument("alignment: every gradient field is zero");
  for (std::size_t a = 0; a < k_slots; ++a) {
    for (std::size_t b = 0; b < k_slots; ++b) {
      if (a == b)
        r.pairwise(a, b) = 1.0;
      else if (counts(a, b) > 0.0)
        r.pairwise(a, b) /= counts(a, b);
    }
  }
  r.mean_s = total / static_cast<double>(used);
  return r;
}

std::vector<GradientField> query_gradient_fields(const enc::EncoderParams& params, const Episode& episode,
                                                 const AlignmentOptions& opts) {
  episode.validate();
  const double w = opts.score == ScoreKind::holistic ? 0.0 : opts.score == ScoreKind::chamfer ? 1.0 : opts.ct_weight;
  const std::vector<int> classes = episode.classes();

  std::vector<enc::ImageForward> fs;
  std::vector<std::pair<Vector, int>> es;
  for (const auto& s : episode.support) {
    fs.push_back(enc::forward_image(params, s.phi));
    es.emplace_back(fs.back().hol.e, s.label);
  }
  const auto protos = enc::compute_prototypes(es);

  std::vector<Matrix> pools(classes.size());
  if (w > 0.0) {
    for (std::size_t c = 0; c < classes.size(); ++c) {
      std::vector<Vector> rows;
      for (std::size_t i = 0; i < fs.size(); ++i) {
        if (episode.support[i].label != classes[c]) continue;
        const Matrix zh = enc::centered_topk(fs[i].emb, fs[i].omega, opts.kappa).z_hat;
        for (std::size_t j = 0; j < zh.rows(); ++j) rows.push_back(zh.row_vector(j));
      }
      pools[c] = Matrix::from_rows(rows);
    }
  }

  std::vector<GradientField> out;
  for (const auto& q : episode.query) {
    const std::size_t c = static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), q.label) -
                                                   classes.begin());
    const enc::ImageForward f = enc::forward_image(params, q.phi);
    Matrix gy(q.phi.rows(), q.phi.cols());
    if (w < 1.0) {
      gy += holistic_grad(f.hol, f.omega, protos[c].p, f.emb, Reference::raw_projection).per_slot * (1.0 - w);
    }
    if (w > 0.0) {
      const enc::CenteredForward cf = enc::centered_topk(f.emb, f.omega, opts.kappa);
      const match::ChamferGrad cg = match::chamfer_score_grad(cf.z_hat, pools[c]);
      gy += enc::centered_backward(cf, f.emb, cg.grad_query) * w;
    }
    out.push_back(to_unit_reference(gy, f.emb));
  }
  return out;
}

AlignmentReport alignment_metric(const enc::EncoderParams& params, const std::vector<Episode>& episodes,
                                 const AlignmentOptions& opts) {
  if (episodes.empty()) throw InvalidArgument("alignment_metric: need at least one episode");
  std::vector<GradientField> fields;
  for (const auto& ep : episodes) {
    auto f = query_gradient_fields(params, ep, opts);
    fields.insert(fields.end(), std::make_move_iterator(f.begin()), std::make_move_iterator(f.end()));
  }
  AlignmentReport r = alignment_of_fields(fields);
  r.episode_count = episodes.size();
  return r;
}

RankReport field_rank(const GradientField& field, double tol_ratio) {
  if (field.per_slot.empty()) throw InvalidArgument("field_rank: empty field");
  RankReport r;
  r.singular_values = singular_values(field.per_slot);
  const double s1 = r.singular_values.front();
  r.tolerance = tol_ratio * s1;
  if (!(s1 > 0.0)) return r;
  for (double s : r.singular_values)
    if (s >= r.tolerance) ++r.numerical_rank;
  return r;
}

MarginCheck check_margin(const Matrix& s) {
  MarginCheck m;
  m.margin = std::numeric_limits<double>::infinity();
  std::vector<bool> taken(s.cols(), false);
  m.collision_free = true;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < s.cols(); ++j)
      if (s(i, j) > s(i, best)) best = j;
    double second = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < s.cols(); ++j)
      if (j != best) second = std::max(second, s(i, j));
    m.margin = std::min(m.margin, s(i, best) - second);
    if (taken[best]) m.collision_free = false;
    taken[best] = true;
    m.argmax.push_back(best);
  }
  return m;
}

MarginConfig margin_config(std::size_t k, std::size_t d, double margin, Rng& rng, double noise,
                           std::size_t max_attempts) {
  if (k < 2 || d < 1) throw InvalidArgument("margin_config: need K >= 2 and D >= 1");
  MarginConfig c;
  while (c.attempts < max_attempts) {
    ++c.attempts;
    std::vector<Vector> zc, zq;
    for (std::size_t j = 0; j < k; ++j) zc.push_back(random_unit_vector(d, rng));
    std::vector<std::size_t> perm(k);
    for (std::size_t j = 0; j < k; ++j) perm[j] = j;
    for (std::size_t j = k - 1; j > 0; --j) std::swap(perm[j], perm[rng.uniform_index(j + 1)]);
    for (std::size_t j = 0; j < k; ++j) {
      Vector v = zc[perm[j]];
      for (auto& x : v) x += noise * rng.normal();
      zq.push_back(l2_normalize(v));
    }
    c.z_q = Matrix::from_rows(zq);
    c.z_c = Matrix::from_rows(zc);
    const MarginCheck m = check_margin(match::cost_matrix(c.z_q, c.z_c));
    if (m.collision_free && m.margin >= margin) return c;
  }
  throw NumericError("margin_config: no configuration met the margin within the attempt budget");
}

SinkhornProbe sinkhorn_limit_probe(const Matrix& z_q, const Matrix& z_c, const std::vector<double>& eps_list,
                                   int max_iters, double tol) {
  const Matrix s = match::cost_matrix(z_q, z_c);
  SinkhornProbe p;
  p.assumptions = check_margin(s);
  if (!(p.assumptions.margin > 0.0))
    p.failure = "row margin is not positive";
  else if (!p.assumptions.collision_free)
    p.failure = "greedy row assignment collides";
  p.assumptions_hold = p.failure.empty();

  const Matrix g_hard = chamfer_grad(z_q, z_c).per_slot;
  const double uniform = 1.0 / static_cast<double>(s.cols());
  for (double eps : eps_list) {
    const match::Coupling c = match::sinkhorn(s, eps, max_iters, tol);
    SinkhornProbeRow row;
    row.epsilon = eps;
    row.converged = c.converged;
    row.residual = c.residual;
    row.min_peak = 1.0;
    for (std::size_t i = 0; i < s.rows(); ++i) row.min_peak = std::min(row.min_peak, c.t(i, p.assumptions.argmax[i]));
    for (double x : c.t.data()) row.max_dev_uniform = std::max(row.max_dev_uniform, std::abs(x - uniform));
    match::MatcherConfig cfg;
    cfg.kind = match::MatcherKind::sinkhorn;
    const Matrix g = assignment_grad(cfg, c.t, z_q, z_c, AssignmentMode::direct).per_slot;
    row.grad_gap = frobenius_norm(g - g_hard);
    p.rows.push_back(row);
  }
  return p;
}

double holistic_ce(const enc::EncoderParams& params, const Episode& episode, const Matrix& w2) {
  enc::EncoderParams p = params;
  p.head.w2 = w2;
  enc::ObjectiveConfig cfg;
  cfg.decor.kind = enc::DecorrelationKind::none;
  return enc::episode_loss(p, episode, cfg).ce;
}

CeCheck ce_transform_check(const enc::EncoderParams& params, const Episode& episode, const Matrix& w2_new) {
  CeCheck c;
  c.ce_before = holistic_ce(params, episode, params.head.w2);
  c.ce_after = holistic_ce(params, episode, w2_new);
  c.delta = std::abs(c.ce_after - c.ce_before);
  return c;
}

CeCheck ce_rotation_check(const enc::EncoderParams& params, const Episode& episode, Rng& rng) {
  const Matrix u = random_orthogonal(params.dim(), rng);
  return ce_transform_check(params, episode, matmul(u, params.head.w2));
}

Matrix episode_slot_batch(const Episode& episode) {
  std::vector<Vector> rows;
  for (const auto* group : {&episode.support, &episode.query})
    for (const auto& img : *group)
      for (std::size_t k = 0; k < img.phi.rows(); ++k) rows.push_back(img.phi.row_vector(k));
  return Matrix::from_rows(rows);
}

Matrix covariance(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n < 2) throw InvalidArgument("covariance: need at least 2 rows");
  Vector mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) axpy(1.0 / static_cast<double>(n), x.row(i), mu);
  Matrix c(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector r = sub(x.row(i), mu);
    add_outer(c, 1.0 / static_cast<double>(n), r, r);
  }
  return c;
}

RebaseReport cc_rebase(const enc::EncoderParams& params, const Episode& episode) {
  const Matrix phi = episode_slot_batch(episode);
  const Matrix sigma_phi = covariance(phi);
  const SymEig phi_eig = sym_eig(sigma_phi);
  const double top = phi_eig.values.front();
  if (!(phi_eig.values.back() > 1e-12 * std::max(top, 1.0)))
    throw NumericError("cc_rebase: slot covariance is singular (need more independent slots than D)");

  const Matrix& w2 = params.head.w2;
  const Matrix sigma_y = matmul_bt(matmul(w2, sigma_phi), w2);
  const SymEig y_eig = sym_eig(sigma_y);
  if (!(y_eig.values.back() > 1e-12 * std::max(y_eig.values.front(), 1.0)))
    throw NumericError("cc_rebase: projected covariance is singular");

  RebaseReport r;
  r.w2_rebased = matmul_at(y_eig.vectors, w2);
  r.off_diag_before = off_diagonal_norm(covariance(matmul_bt(phi, w2)));
  r.off_diag_after = off_diagonal_norm(covariance(matmul_bt(phi, r.w2_rebased)));
  const CeCheck ce = ce_transform_check(params, episode, r.w2_rebased);
  r.ce_before = ce.ce_before;
  r.ce_after = ce.ce_after;
  r.delta_ce = ce.delta;
  return r;
}

double spectral_floor(std::size_t d) {
  if (d == 0) throw InvalidArgument("spectral_floor: d must be positive");
  const double dd = static_cast<double>(d);
  return (dd - 1.0) * (dd - 1.0) / dd;
}

SpectralFloor spectral_floor_check(const Matrix& z_batch) {
  for (std::size_t i = 0; i < z_batch.rows(); ++i)
    if (std::abs(norm(z_batch.row(i)) - 1.0) > 1e-8)
      throw InvalidArgument("spectral_floor_check: row " + std::to_string(i) + " is not unit norm");
  SpectralFloor f;
  f.loss = enc::spectral_penalty(z_batch);
  f.floor = spectral_floor(z_batch.cols());
  f.slack = f.loss - f.floor;
  return f;
}

}  // namespace compose::lab
