#pragma once

#include <functional>
#include <span>

#include "compose/matrix.hpp"
#include "compose/rng.hpp"

namespace compose {

inline constexpr double kNormEps = 1e-9;

// Softmax of each column of a K x N logit matrix (max-subtracted).
// Throws NumericError on non-finite input.
Matrix softmax_columns(const Matrix& logits);
// Softmax of each row.
Matrix softmax_rows(const Matrix& logits);
Vector softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> x);

// v / ||v||; throws DegenerateVector when ||v|| <= eps.
Vector l2_normalize(std::span<const double> v, double eps = kNormEps);

struct SymEig {
  Vector values;   // descending
  Matrix vectors;  // column j is the eigenvector of values[j]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
// Requires max |A - A^T| <= 1e-9.
SymEig sym_eig(const Matrix& a);

// Singular values (descending) of an arbitrary matrix via one-sided Jacobi.
Vector singular_values(const Matrix& a);

// Haar-distributed orthogonal matrix (Gram-Schmidt on Gaussian columns,
// sign-fixed so the diagonal of R is positive).
Matrix random_orthogonal(std::size_t d, Rng& rng);

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng);
Vector random_unit_vector(std::size_t d, Rng& rng);
double determinant(Matrix a);

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for each coordinate.
// Throws NumericError naming the coordinate when f is non-finite.
Vector finite_diff_gradient(const ScalarFn& f, std::span<const double> x, double h = 1e-5);

// ||a - b|| / max(||b||, floor)
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

}  // namespace compose
