#include "spider3p/gauss_hermite.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "spider3p/errors.hpp"

namespace spider3p {

namespace {

GaussHermiteRule build_rule(int n) {
  if (n < 1) throw ConfigError("gauss_hermite_rule: need n >= 1 nodes");
  // Jacobi matrix of the Hermite recurrence: zero diagonal, off-diagonal
  // beta_k = sqrt(k/2). Eigenvalues are the nodes; the squared first
  // components of the normalized eigenvectors, scaled by the total mass
  // sqrt(pi), are the weights.
  Matrix j(n, n, 0.0);
  for (int k = 1; k < n; ++k) {
    const double beta = std::sqrt(0.5 * k);
    j(k - 1, k) = beta;
    j(k, k - 1) = beta;
  }
  SymEigen eig = jacobi_eigensym(j, true);
  const double mu0 = std::sqrt(M_PI);

  GaussHermiteRule rule;
  rule.n = n;
  rule.nodes = eig.values;
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (int k = 0; k < n; ++k) norm2 += eig.vectors(k, i) * eig.vectors(k, i);
    const double first = eig.vectors(0, i);
    rule.weights[i] = mu0 * (first * first) / norm2;
  }

  double wsum = 0.0;
  for (double w : rule.weights) wsum += w;
  if (std::abs(wsum - mu0) > 1e-10 * mu0) {
    throw NumericalError("gauss_hermite_rule: weight mass off by " +
                         std::to_string(wsum - mu0));
  }
  return rule;
}

}  // namespace

const GaussHermiteRule& gauss_hermite_rule(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) {
    it = cache.emplace(n, std::make_unique<GaussHermiteRule>(build_rule(n))).first;
  }
  return *it->second;
}

}  // namespace spider3p
