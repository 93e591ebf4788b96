#include "spider3p/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spider3p/errors.hpp"

namespace spider3p {

Matrix Matrix::identity(int n) {
  Matrix m(n, n, 0.0);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vec add_scaled(const Vec& a, double alpha, const Vec& b) {
  Vec out = a;
  kern::axpy(alpha, b.data(), out.data(), out.size());
  return out;
}

Vec sub(const Vec& a, const Vec& b) {
  Vec out = a;
  kern::axpy(-1.0, b.data(), out.data(), out.size());
  return out;
}

double nrm2sq_diff(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double max_abs_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void matvec(const Matrix& a, const double* x, double* y) {
  for (int i = 0; i < a.rows(); ++i) y[i] = kern::dot(a.row(i), x, a.cols());
}

Vec matvec(const Matrix& a, const Vec& x) {
  Vec y(a.rows());
  matvec(a, x.data(), y.data());
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    for (int k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      kern::axpy(aik, b.row(k), c.row(i), b.cols());
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

double quad_form(const Matrix& a, const Vec& x) {
  double acc = 0.0;
  for (int i = 0; i < a.rows(); ++i) acc += x[i] * kern::dot(a.row(i), x.data(), a.cols());
  return acc;
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  const double* p = a.data();
  const std::size_t n = static_cast<std::size_t>(a.rows()) * a.cols();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(p[i]));
  return m;
}

bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

std::optional<CholeskyFactor> CholeskyFactor::compute(const Matrix& spd) {
  const int n = spd.rows();
  Matrix l(n, n, 0.0);
  for (int j = 0; j < n; ++j) {
    double diag = spd(j, j) - kern::nrm2sq(l.row(j), j);
    if (!(diag > 0.0) || !std::isfinite(diag)) return std::nullopt;
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      l(i, j) = (spd(i, j) - kern::dot(l.row(i), l.row(j), j)) / ljj;
    }
  }
  return CholeskyFactor(std::move(l));
}

void CholeskyFactor::solve_in_place(double* b) const {
  const int n = lower_.rows();
  for (int i = 0; i < n; ++i) {
    b[i] = (b[i] - kern::dot(lower_.row(i), b, i)) / lower_(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    double acc = b[i];
    for (int k = i + 1; k < n; ++k) acc -= lower_(k, i) * b[k];
    b[i] = acc / lower_(i, i);
  }
}

Vec CholeskyFactor::solve(const Vec& b) const {
  Vec x = b;
  solve_in_place(x.data());
  return x;
}

Matrix CholeskyFactor::inverse() const {
  const int n = lower_.rows();
  Matrix inv(n, n, 0.0);
  Vec e(n, 0.0);
  for (int j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    solve_in_place(e.data());
    for (int i = 0; i < n; ++i) inv(i, j) = e[i];
  }
  // Symmetrize away the last rounding bit.
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double v = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = v;
      inv(j, i) = v;
    }
  return inv;
}

SymEigen jacobi_eigensym(const Matrix& sym, bool want_vectors) {
  if (!sym.square()) throw NumericalError("jacobi_eigensym: matrix must be square");
  const int n = sym.rows();
  Matrix a = sym;
  Matrix v = want_vectors ? Matrix::identity(n) : Matrix();

  auto off_norm = [&]() {
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) acc += a(i, j) * a(i, j);
    return std::sqrt(2.0 * acc);
  };
  double frob = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) frob += a(i, j) * a(i, j);
  frob = std::sqrt(frob);
  const double tol = 1e-15 * std::max(frob, 1e-300);

  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps && off_norm() > tol; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        if (want_vectors) {
          for (int k = 0; k < n; ++k) {
            const double vkp = v(k, p);
            const double vkq = v(k, q);
            v(k, p) = c * vkp - s * vkq;
            v(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }
  }

  SymEigen out;
  out.values.resize(n);
  for (int i = 0; i < n; ++i) out.values[i] = a(i, i);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return out.values[i] < out.values[j]; });
  Vec sorted(n);
  for (int i = 0; i < n; ++i) sorted[i] = out.values[order[i]];
  out.values = std::move(sorted);
  if (want_vectors) {
    out.vectors = Matrix(n, n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  return out;
}

}  // namespace spider3p
