#include "compose/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "compose/errors.hpp"

namespace compose {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw InvalidArgument("Matrix: data length does not equal rows*cols");
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw InvalidArgument("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols()) throw InvalidArgument("Matrix::from_rows: ragged rows");
    m.set_row(r, rows[r]);
  }
  return m;
}

Vector Matrix::row_vector(std::size_t r) const {
  auto s = row(r);
  return {s.begin(), s.end()};
}

Vector Matrix::col_vector(std::size_t c) const {
  Vector v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

void Matrix::set_row(std::size_t r, std::span<const double> values) {
  if (values.size() != cols_) throw InvalidArgument("Matrix::set_row: length mismatch");
  std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::select_rows(const std::vector<std::size_t>& idx) const {
  Matrix out(idx.size(), cols_);
  for (std::size_t i = 0; i < idx.size(); ++i) out.set_row(i, row(idx[i]));
  return out;
}

Matrix& Matrix::operator+=(const Matrix& o) {
  if (o.rows_ != rows_ || o.cols_ != cols_) throw InvalidArgument("Matrix +=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
  if (o.rows_ != rows_ || o.cols_ != cols_) throw InvalidArgument("Matrix -=: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (auto& x : data_) x *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw InvalidArgument("matmul: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("matmul_bt: column mismatch");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
  return c;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw InvalidArgument("matmul_at: row mismatch");
  Matrix c(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) add_outer(c, 1.0, a.row(k), b.row(k));
  return c;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) throw InvalidArgument("matvec: length mismatch");
  Vector y(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
  return y;
}

Vector matvec_t(const Matrix& m, std::span<const double> x) {
  if (m.rows() != x.size()) throw InvalidArgument("matvec_t: length mismatch");
  Vector y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(x[r], m.row(r), y);
  return y;
}

void add_outer(Matrix& a, double s, std::span<const double> x, std::span<const double> y) {
  if (a.rows() != x.size() || a.cols() != y.size()) throw InvalidArgument("add_outer: shape mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sx = s * x[i];
    if (sx == 0.0) continue;
    auto ai = a.row(i);
    for (std::size_t j = 0; j < y.size(); ++j) ai[j] += sx * y[j];
  }
}

double frobenius_norm(const Matrix& m) { return norm(m.data()); }

double max_abs(const Matrix& m) {
  double best = 0.0;
  for (double x : m.data()) best = std::max(best, std::abs(x));
  return best;
}

double off_diagonal_norm(const Matrix& m) {
  double acc = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (i != j) acc += m(i, j) * m(i, j);
  return std::sqrt(acc);
}

bool all_finite(const Matrix& m) { return all_finite(m.data()); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double s, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw InvalidArgument("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

Vector scaled(std::span<const double> x, double s) {
  Vector y(x.begin(), x.end());
  for (auto& v : y) v *= s;
  return y;
}

Vector add(std::span<const double> a, std::span<const double> b) {
  Vector y(a.begin(), a.end());
  axpy(1.0, b, y);
  return y;
}

Vector sub(std::span<const double> a, std::span<const double> b) {
  Vector y(a.begin(), a.end());
  axpy(-1.0, b, y);
  return y;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Vector tangent_project(std::span<const double> n, std::span<const double> v) {
  Vector out(v.begin(), v.end());
  axpy(-dot(n, v), n, out);
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateVector("cosine: zero vector");
  return dot(a, b) / (na * nb);
}

}  // namespace compose
