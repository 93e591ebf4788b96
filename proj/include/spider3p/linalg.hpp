#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "spider3p/kernels.hpp"

// Dense linear algebra for the small (q <= ~100) symmetric systems this
// project needs: Cholesky solves and a cyclic Jacobi eigensolver. Row-major
// storage throughout.
namespace spider3p {

using Vec = std::vector<double>;
using StateVector = Vec;

class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

  static Matrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  double* row(int i) { return data_.data() + static_cast<std::size_t>(i) * cols_; }
  const double* row(int i) const {
    return data_.data() + static_cast<std::size_t>(i) * cols_;
  }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool operator==(const Matrix& other) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// Vector helpers (thin wrappers over the kernel layer).
inline double dot(const Vec& a, const Vec& b) { return kern::dot(a.data(), b.data(), a.size()); }
inline double nrm2sq(const Vec& a) { return kern::nrm2sq(a.data(), a.size()); }
Vec add_scaled(const Vec& a, double alpha, const Vec& b);  // a + alpha*b
Vec sub(const Vec& a, const Vec& b);
double nrm2sq_diff(const Vec& a, const Vec& b);
double max_abs_diff(const Vec& a, const Vec& b);

void matvec(const Matrix& a, const double* x, double* y);
Vec matvec(const Matrix& a, const Vec& x);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
double quad_form(const Matrix& a, const Vec& x);  // x' A x
double max_abs(const Matrix& a);
bool all_finite(const Vec& v);

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
class CholeskyFactor {
 public:
  static std::optional<CholeskyFactor> compute(const Matrix& spd);

  Vec solve(const Vec& b) const;
  void solve_in_place(double* b) const;
  Matrix inverse() const;
  const Matrix& lower() const { return lower_; }
  int dim() const { return lower_.rows(); }

 private:
  explicit CholeskyFactor(Matrix lower) : lower_(std::move(lower)) {}
  Matrix lower_;
};

struct SymEigen {
  Vec values;      // ascending
  Matrix vectors;  // columns match values; empty when not requested
};

// Cyclic Jacobi eigensolver for symmetric matrices. Deterministic; converges
// for any symmetric input.
SymEigen jacobi_eigensym(const Matrix& sym, bool want_vectors = true);

}  // namespace spider3p
