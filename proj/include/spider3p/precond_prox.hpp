#pragma once

#include <functional>
#include <memory>

#include "spider3p/linalg.hpp"

namespace spider3p {

// Root-finder tolerances for the general-B ellipsoid prox, exposed so runs
// are reproducible under a pinned configuration.
struct ProxOptions {
  double kkt_tol_rel = 1e-12;   // stop when |s'ᵀΩs' - r| <= kkt_tol_rel * r
  int kkt_max_iter = 200;
  double bracket_growth = 4.0;
  double proportional_tol = 1e-10;  // relative, for detecting B = c*Omega
  double feasible_slack = 1e-9;     // relative slack in feasibility checks
  // Points with sᵀΩs <= r*(1+boundary_slack) count as feasible inside the
  // prox, so freshly projected boundary points are bitwise fixed points.
  double boundary_slack = 1e-12;
};

// Preconditioner B(s) with spectral bounds [v_min, v_max]. Constant variants
// are validated and factored once at construction; evaluation in the inner
// loop does no checking.
class Preconditioner {
 public:
  static Preconditioner identity(int dim);
  // Bounds from the symmetric eigendecomposition of m.
  static Preconditioner constant_spd(Matrix m);
  // User-declared bounds; the spectrum of m must lie inside them
  // (1e-10 relative tolerance).
  static Preconditioner constant_spd(Matrix m, double v_min, double v_max);
  static Preconditioner callback(int dim, std::function<Matrix(const StateVector&)> eval,
                                 double v_min, double v_max);

  int dim() const { return dim_; }
  double v_min() const { return v_min_; }
  double v_max() const { return v_max_; }
  bool is_identity() const { return kind_ == Kind::identity; }
  bool is_constant() const { return kind_ != Kind::callback; }

  // Materialized B(s). For identity/constant variants this ignores s and
  // returns a reference to the stored matrix; for callbacks it fills scratch.
  const Matrix& eval(const StateVector& s, Matrix& scratch) const;
  Matrix eval(const StateVector& s) const;

  // Constant variants only.
  const Matrix& constant_matrix() const;
  const Matrix& constant_inverse() const;
  const CholeskyFactor& constant_cholesky() const;

 private:
  enum class Kind { identity, constant, callback };
  Preconditioner() = default;

  Kind kind_ = Kind::identity;
  int dim_ = 0;
  double v_min_ = 1.0;
  double v_max_ = 1.0;
  struct ConstantData {
    Matrix m;
    Matrix inv;
    std::unique_ptr<CholeskyFactor> chol;
  };
  std::shared_ptr<const ConstantData> constant_;
  std::function<Matrix(const StateVector&)> callback_;
};

// Regularizer g with its weighted proximal map.
class Regularizer {
 public:
  using ProxFn =
      std::function<StateVector(const Matrix& b, double gamma, const StateVector& s)>;
  using ValueFn = std::function<double(const StateVector& s)>;

  // g == 0 on all of R^q.
  static Regularizer zero();
  // Characteristic function of K = { s : sᵀ Omega s <= radius }.
  static Regularizer ellipsoid(Matrix omega, double radius);
  static Regularizer generic(ProxFn prox, ValueFn value);

  bool is_zero() const { return kind_ == Kind::zero; }
  bool is_ellipsoid() const { return kind_ == Kind::ellipsoid; }
  bool is_indicator() const { return kind_ != Kind::generic; }

  const Matrix& omega() const;
  double radius() const;

  double value(const StateVector& s) const;  // g(s); +inf outside an ellipsoid
  bool feasible(const StateVector& s, double rel_slack = 1e-9) const;

 private:
  enum class Kind { zero, ellipsoid, generic };
  friend StateVector weighted_prox(const Matrix&, double, const Regularizer&,
                                   const StateVector&, const ProxOptions&);
  Regularizer() = default;

  Kind kind_ = Kind::zero;
  Matrix omega_;
  double radius_ = 0.0;
  ProxFn prox_;
  ValueFn value_;
};

// Prox_{B, gamma*g}(s) = argmin_{s'} { gamma*g(s') + (1/2)(s'-s)ᵀ B (s'-s) }.
//
// Zero regularizer: returns s. Ellipsoid with B proportional to Omega:
// radial scaling. Ellipsoid with general B: KKT system s' = (B+lam*Omega)^{-1} B s
// with lam found by safeguarded Newton/bisection on s'ᵀOmega s' - r.
StateVector weighted_prox(const Matrix& b, double gamma, const Regularizer& g,
                          const StateVector& s, const ProxOptions& opts = {});

// ||Prox_{B(s_eval), gamma*g}(s_prev + gamma*h(s_prev)) - s_prev||^2 / gamma^2,
// the squared step-normalized fixed-point residual used as the stationarity
// measure. With B = I and g = 0 this reduces to ||h(s_prev)||^2.
double prox_fixed_point_residual(const StateVector& s_prev, const StateVector& s_eval,
                                 double gamma,
                                 const std::function<StateVector(const StateVector&)>& h,
                                 const Preconditioner& b, const Regularizer& g,
                                 const ProxOptions& opts = {});

}  // namespace spider3p
