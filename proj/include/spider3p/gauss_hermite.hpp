#pragma once

#include "spider3p/linalg.hpp"

namespace spider3p {

// Gauss-Hermite rule for the weight exp(-u^2): sum_j w[j] f(u[j]) approximates
// integral f(u) exp(-u^2) du; the weights sum to sqrt(pi). Nodes ascending.
//
// For an expectation against N(mu, sigma^2), substitute z = mu + sqrt(2)*sigma*u
// and divide by sqrt(pi).
struct GaussHermiteRule {
  int n = 0;
  Vec nodes;
  Vec weights;
};

// Computed via Golub-Welsch on the Jacobi matrix; cached per node count.
const GaussHermiteRule& gauss_hermite_rule(int n);

}  // namespace spider3p
