#include "compose/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "compose/errors.hpp"

namespace compose {

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return m + std::log(acc);
}

Vector softmax(std::span<const double> logits) {
  if (!all_finite(logits)) throw NumericError("softmax: non-finite logit");
  Vector out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double m = *std::max_element(out.begin(), out.end());
  double total = 0.0;
  for (auto& v : out) {
    v = std::exp(v - m);
    total += v;
  }
  for (auto& v : out) v /= total;
  return out;
}

Matrix softmax_columns(const Matrix& logits) {
  if (!all_finite(logits)) throw NumericError("softmax_columns: non-finite logit");
  Matrix out(logits.rows(), logits.cols());
  Vector col(logits.rows());
  for (std::size_t c = 0; c < logits.cols(); ++c) {
    for (std::size_t r = 0; r < logits.rows(); ++r) col[r] = logits(r, c);
    const Vector p = softmax(col);
    for (std::size_t r = 0; r < logits.rows(); ++r) out(r, c) = p[r];
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) out.set_row(r, softmax(logits.row(r)));
  return out;
}

Vector l2_normalize(std::span<const double> v, double eps) {
  const double n = norm(v);
  if (!(n > eps)) throw DegenerateVector("l2_normalize: norm " + std::to_string(n) + " <= eps");
  return scaled(v, 1.0 / n);
}

SymEig sym_eig(const Matrix& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw InvalidArgument("sym_eig: matrix must be square");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-9) throw InvalidArgument("sym_eig: matrix is not symmetric");
  if (!all_finite(a)) throw NumericError("sym_eig: non-finite entry");

  Matrix m = a;
  // symmetrize exactly so rotations act on a truly symmetric matrix
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = m(j, i) = 0.5 * (a(i, j) + a(j, i));
  Matrix v = Matrix::identity(n);

  const double scale = std::max(frobenius_norm(m), std::numeric_limits<double>::min());
  for (int sweep = 0; sweep < 100; ++sweep) {
    if (off_diagonal_norm(m) <= 1e-15 * scale) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (std::abs(apq) <= std::numeric_limits<double>::min()) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p);
          const double mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k);
          const double mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return m(i, i) > m(j, j); });
  SymEig out{Vector(n), Matrix(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = m(order[j], order[j]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

Vector singular_values(const Matrix& a) {
  // Orthogonalize the shorter side: rows when rows <= cols.
  Matrix w = a.rows() <= a.cols() ? a : a.transpose();
  const std::size_t k = w.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        const double alpha = dot(w.row(p), w.row(p));
        const double beta = dot(w.row(q), w.row(q));
        const double gamma = dot(w.row(p), w.row(q));
        if (std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        auto rp = w.row(p);
        auto rq = w.row(q);
        for (std::size_t j = 0; j < w.cols(); ++j) {
          const double x = rp[j];
          const double y = rq[j];
          rp[j] = c * x - s * y;
          rq[j] = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }
  Vector sv(k);
  for (std::size_t i = 0; i < k; ++i) sv[i] = norm(w.row(i));
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& x : m.data()) x = stddev * rng.normal();
  return m;
}

Vector random_unit_vector(std::size_t d, Rng& rng) {
  for (;;) {
    Vector v(d);
    for (auto& x : v) x = rng.normal();
    const double n = norm(v);
    if (n > 1e-12) return scaled(v, 1.0 / n);
  }
}

Matrix random_orthogonal(std::size_t d, Rng& rng) {
  if (d == 0) throw InvalidArgument("random_orthogonal: d must be >= 1");
  // Columns of g orthonormalized with two passes of modified Gram-Schmidt.
  Matrix g = gaussian_matrix(d, d, 1.0, rng).transpose();  // rows = columns of G
  Matrix q(d, d);
  for (std::size_t j = 0; j < d; ++j) {
    Vector col = g.row_vector(j);
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t i = 0; i < j; ++i) axpy(-dot(q.row(i), col), q.row(i), col);
    // Gram-Schmidt keeps diag(R) positive, which is what makes Q Haar.
    q.set_row(j, scaled(col, 1.0 / norm(col)));
  }
  return q.transpose();
}

double determinant(Matrix a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw InvalidArgument("determinant: matrix must be square");
  double det = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (a(piv, c) == 0.0) return 0.0;
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a(piv, k), a(c, k));
      det = -det;
    }
    det *= a(c, c);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a(r, c) / a(c, c);
      for (std::size_t k = c; k < n; ++k) a(r, k) -= f * a(c, k);
    }
  }
  return det;
}

Vector finite_diff_gradient(const ScalarFn& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_gradient: step must be positive");
  Vector xp(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = f(xp);
    xp[i] = orig - h;
    const double fm = f(xp);
    xp[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_gradient: non-finite value at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  return norm(sub(a, b)) / std::max(norm(b), floor);
}

}  // namespace compose
