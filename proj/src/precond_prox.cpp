#include "spider3p/precond_prox.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <tuple>

#include "spider3p/errors.hpp"

namespace spider3p {

namespace {

void check_symmetric(const Matrix& m, const char* who) {
  const double scale = std::max(max_abs(m), 1e-300);
  for (int i = 0; i < m.rows(); ++i)
    for (int j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-10 * scale)
        throw ConfigError(std::string(who) + ": matrix is not symmetric");
}

}  // namespace

Preconditioner Preconditioner::identity(int dim) {
  Preconditioner p;
  p.kind_ = Kind::identity;
  p.dim_ = dim;
  p.v_min_ = p.v_max_ = 1.0;
  auto data = std::make_shared<ConstantData>();
  data->m = Matrix::identity(dim);
  data->inv = Matrix::identity(dim);
  data->chol = std::make_unique<CholeskyFactor>(*CholeskyFactor::compute(data->m));
  p.constant_ = std::move(data);
  return p;
}

Preconditioner Preconditioner::constant_spd(Matrix m) {
  check_symmetric(m, "Preconditioner::constant_spd");
  SymEigen eig = jacobi_eigensym(m, false);
  const double lo = eig.values.front();
  const double hi = eig.values.back();
  if (!(lo > 0.0)) {
    throw ConfigError("Preconditioner::constant_spd: matrix is not positive definite"
                      " (min eigenvalue " + std::to_string(lo) + ")");
  }
  return constant_spd(std::move(m), lo, hi);
}

Preconditioner Preconditioner::constant_spd(Matrix m, double v_min, double v_max) {
  check_symmetric(m, "Preconditioner::constant_spd");
  if (!(v_min > 0.0) || !(v_min <= v_max)) {
    throw ConfigError("Preconditioner::constant_spd: need 0 < v_min <= v_max");
  }
  SymEigen eig = jacobi_eigensym(m, false);
  const double slack = 1e-10 * std::max(std::abs(v_max), 1.0);
  if (eig.values.front() < v_min - slack || eig.values.back() > v_max + slack) {
    std::ostringstream msg;
    msg << "Preconditioner::constant_spd: spectrum [" << eig.values.front() << ", "
        << eig.values.back() << "] escapes declared bounds [" << v_min << ", "
        << v_max << "]";
    throw ConfigError(msg.str());
  }

  Preconditioner p;
  p.kind_ = Kind::constant;
  p.dim_ = m.rows();
  p.v_min_ = v_min;
  p.v_max_ = v_max;
  auto data = std::make_shared<ConstantData>();
  auto chol = CholeskyFactor::compute(m);
  if (!chol) throw ConfigError("Preconditioner::constant_spd: Cholesky failed");
  data->chol = std::make_unique<CholeskyFactor>(std::move(*chol));
  data->inv = data->chol->inverse();
  // M * M^{-1} must reproduce the identity to 1e-10.
  Matrix prod = matmul(m, data->inv);
  for (int i = 0; i < prod.rows(); ++i) prod(i, i) -= 1.0;
  if (max_abs(prod) > 1e-10) {
    throw NumericalError("Preconditioner::constant_spd: inverse check failed, "
                         "residual " + std::to_string(max_abs(prod)));
  }
  data->m = std::move(m);
  p.constant_ = std::move(data);
  return p;
}

Preconditioner Preconditioner::callback(int dim,
                                        std::function<Matrix(const StateVector&)> eval,
                                        double v_min, double v_max) {
  if (!(v_min > 0.0) || !(v_min <= v_max)) {
    throw ConfigError("Preconditioner::callback: need 0 < v_min <= v_max");
  }
  Preconditioner p;
  p.kind_ = Kind::callback;
  p.dim_ = dim;
  p.v_min_ = v_min;
  p.v_max_ = v_max;
  p.callback_ = std::move(eval);
  return p;
}

const Matrix& Preconditioner::eval(const StateVector& s, Matrix& scratch) const {
  if (kind_ != Kind::callback) return constant_->m;
  scratch = callback_(s);
  return scratch;
}

Matrix Preconditioner::eval(const StateVector& s) const {
  if (kind_ != Kind::callback) return constant_->m;
  return callback_(s);
}

const Matrix& Preconditioner::constant_matrix() const {
  if (kind_ == Kind::callback)
    throw ConfigError("Preconditioner: callback variant has no constant matrix");
  return constant_->m;
}

const Matrix& Preconditioner::constant_inverse() const {
  if (kind_ == Kind::callback)
    throw ConfigError("Preconditioner: callback variant has no constant inverse");
  return constant_->inv;
}

const CholeskyFactor& Preconditioner::constant_cholesky() const {
  if (kind_ == Kind::callback)
    throw ConfigError("Preconditioner: callback variant has no factorization");
  return *constant_->chol;
}

Regularizer Regularizer::zero() { return Regularizer(); }

Regularizer Regularizer::ellipsoid(Matrix omega, double radius) {
  check_symmetric(omega, "Regularizer::ellipsoid");
  if (!(radius > 0.0)) throw ConfigError("Regularizer::ellipsoid: radius must be > 0");
  SymEigen eig = jacobi_eigensym(omega, false);
  if (!(eig.values.front() > 0.0)) {
    throw ConfigError("Regularizer::ellipsoid: matrix is not positive definite");
  }
  Regularizer g;
  g.kind_ = Kind::ellipsoid;
  g.omega_ = std::move(omega);
  g.radius_ = radius;
  return g;
}

Regularizer Regularizer::generic(ProxFn prox, ValueFn value) {
  Regularizer g;
  g.kind_ = Kind::generic;
  g.prox_ = std::move(prox);
  g.value_ = std::move(value);
  return g;
}

const Matrix& Regularizer::omega() const {
  if (kind_ != Kind::ellipsoid)
    throw ConfigError("Regularizer: not an ellipsoid indicator");
  return omega_;
}

double Regularizer::radius() const {
  if (kind_ != Kind::ellipsoid)
    throw ConfigError("Regularizer: not an ellipsoid indicator");
  return radius_;
}

double Regularizer::value(const StateVector& s) const {
  switch (kind_) {
    case Kind::zero:
      return 0.0;
    case Kind::ellipsoid:
      return feasible(s) ? 0.0 : std::numeric_limits<double>::infinity();
    case Kind::generic:
      return value_(s);
  }
  return 0.0;
}

bool Regularizer::feasible(const StateVector& s, double rel_slack) const {
  if (kind_ != Kind::ellipsoid) return true;
  return quad_form(omega_, s) <= radius_ * (1.0 + rel_slack);
}

namespace {

// Projection onto {s' : s'ᵀΩs' <= r} in the B-weighted norm for general SPD B.
// s'(lam) = (B + lam*Omega)^{-1} B s and phi(lam) = s'ᵀΩs' - r is strictly
// decreasing; the root is isolated by geometric bracket growth and polished by
// Newton steps safeguarded with bisection.
StateVector ellipsoid_prox_kkt(const Matrix& b, const Matrix& omega, double r,
                               const StateVector& s, const ProxOptions& opts) {
  const int q = b.rows();
  const Vec bs = matvec(b, s);

  Matrix shifted(q, q);
  StateVector sp(q);
  auto eval_phi = [&](double lam, StateVector& out) {
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) shifted(i, j) = b(i, j) + lam * omega(i, j);
    auto chol = CholeskyFactor::compute(shifted);
    if (!chol) {
      throw NumericalError("ellipsoid prox: B + lam*Omega not positive definite at lam=" +
                           std::to_string(lam));
    }
    out = chol->solve(bs);
    Vec os = matvec(omega, out);
    const double phi = kern::dot(out.data(), os.data(), out.size()) - r;
    // phi'(lam) = -2 (Omega s')ᵀ (B + lam Omega)^{-1} (Omega s')
    Vec msol = chol->solve(os);
    const double dphi = -2.0 * kern::dot(os.data(), msol.data(), os.size());
    return std::pair<double, double>(phi, dphi);
  };

  const double tol = opts.kkt_tol_rel * r;
  double lo = 0.0;
  double hi = 1.0;
  StateVector tmp(q);
  auto [phi_hi, dphi_hi] = eval_phi(hi, tmp);
  int grow = 0;
  while (phi_hi > 0.0) {
    lo = hi;
    hi *= opts.bracket_growth;
    if (++grow > 600) {
      throw NumericalError("ellipsoid prox: bracket growth did not capture the root, "
                           "lam in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    std::tie(phi_hi, dphi_hi) = eval_phi(hi, tmp);
  }

  double lam = 0.5 * (lo + hi);
  for (int it = 0; it < opts.kkt_max_iter; ++it) {
    auto [phi, dphi] = eval_phi(lam, sp);
    if (std::abs(phi) <= tol) return sp;
    if (phi > 0.0) lo = lam; else hi = lam;
    double next = lam - phi / dphi;
    if (!(next > lo) || !(next < hi) || !std::isfinite(next)) {
      next = 0.5 * (lo + hi);
    }
    lam = next;
  }
  std::ostringstream msg;
  msg << "ellipsoid prox: root finder did not converge; bracket [" << lo << ", " << hi
      << "], target |phi| <= " << tol;
  throw NumericalError(msg.str());
}

// True when b == c*omega for some c > 0, to opts.proportional_tol relative.
bool proportional_to(const Matrix& b, const Matrix& omega, double tol, double* c_out) {
  double num = 0.0;
  double den = 0.0;
  const std::size_t n = static_cast<std::size_t>(b.rows()) * b.cols();
  const double* pb = b.data();
  const double* po = omega.data();
  for (std::size_t i = 0; i < n; ++i) {
    num += pb[i] * po[i];
    den += po[i] * po[i];
  }
  if (!(den > 0.0)) return false;
  const double c = num / den;
  if (!(c > 0.0)) return false;
  const double scale = std::max(max_abs(b), 1e-300);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(pb[i] - c * po[i]) > tol * scale) return false;
  }
  *c_out = c;
  return true;
}

}  // namespace

StateVector weighted_prox(const Matrix& b, double gamma, const Regularizer& g,
                          const StateVector& s, const ProxOptions& opts) {
  if (gamma < 0.0) throw ConfigError("weighted_prox: gamma must be >= 0");
  if (g.is_zero()) return s;
  if (g.is_ellipsoid()) {
    const Matrix& omega = g.omega();
    const double r = g.radius();
    const double q = quad_form(omega, s);
    if (q <= r * (1.0 + opts.boundary_slack)) return s;
    double c = 0.0;
    if (proportional_to(b, omega, opts.proportional_tol, &c)) {
      StateVector out = s;
      kern::scal(std::sqrt(r / q), out.data(), out.size());
      return out;
    }
    return ellipsoid_prox_kkt(b, omega, r, s, opts);
  }
  return g.prox_(b, gamma, s);
}

double prox_fixed_point_residual(const StateVector& s_prev, const StateVector& s_eval,
                                 double gamma,
                                 const std::function<StateVector(const StateVector&)>& h,
                                 const Preconditioner& b, const Regularizer& g,
                                 const ProxOptions& opts) {
  if (!(gamma > 0.0)) throw ConfigError("prox_fixed_point_residual: gamma must be > 0");
  const StateVector arg = add_scaled(s_prev, gamma, h(s_prev));
  Matrix scratch;
  const StateVector p = weighted_prox(b.eval(s_eval, scratch), gamma, g, arg, opts);
  return nrm2sq_diff(p, s_prev) / (gamma * gamma);
}

}  // namespace spider3p
