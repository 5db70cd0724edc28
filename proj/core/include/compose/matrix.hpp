#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace compose {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Value type; copies are deep.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector row_vector(std::size_t r) const;
  Vector col_vector(std::size_t c) const;
  void set_row(std::size_t r, std::span<const double> values);

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  Matrix transpose() const;
  Matrix select_rows(const std::vector<std::size_t>& idx) const;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T (row-dot products; the common case for slot/feature matrices)
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_at(const Matrix& a, const Matrix& b);
// m * x
Vector matvec(const Matrix& m, std::span<const double> x);
// m^T * x
Vector matvec_t(const Matrix& m, std::span<const double> x);
// a += s * x y^T
void add_outer(Matrix& a, double s, std::span<const double> x, std::span<const double> y);

double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
// Frobenius norm of the off-diagonal part of a square matrix.
double off_diagonal_norm(const Matrix& m);
bool all_finite(const Matrix& m);

// --- vector helpers ---
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
void axpy(double s, std::span<const double> x, std::span<double> y);
Vector scaled(std::span<const double> x, double s);
Vector add(std::span<const double> a, std::span<const double> b);
Vector sub(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v);

// (I - n n^T) v for unit n: component of v orthogonal to n.
Vector tangent_project(std::span<const double> n, std::span<const double> v);
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace compose
