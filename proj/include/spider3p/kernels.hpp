#pragma once

#include <cstddef>
#include <vector>

// Data-parallel inner loops. Every operation has a scalar reference kernel
// and, on x86-64, an AVX2+FMA variant selected at runtime. The variants are
// equivalence-tested against the scalar reference; agreement is to rounding,
// not bit-exact (different summation order, polynomial exp).
namespace spider3p::kern {

enum class Backend { scalar, avx2 };

const char* backend_name(Backend b);

// Backend in use. Default: best supported, unless SPIDER3P_KERNELS=scalar|avx2
// is set in the environment.
Backend active_backend();

// Returns false (and leaves the active backend unchanged) if unsupported.
bool set_backend(Backend b);

bool backend_supported(Backend b);

double dot(const double* x, const double* y, std::size_t n);
double nrm2sq(const double* x, std::size_t n);
double sum(const double* x, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x
void scal(double alpha, double* x, std::size_t n);                   // x *= alpha

// Logistic-tilted moment sums over a quadrature grid. With z_j = shift +
// scale*u[j] and sig = 1/(1+exp(-slope*z_j)):
//   s0 = sum_j w[j] * sig,  s1 = sum_j w[j] * z_j * sig,  s2 = sum_j w[j] * z_j^2 * sig.
struct TiltedMoments {
  double s0 = 0.0;
  double s1 = 0.0;
  double s2 = 0.0;
};
TiltedMoments tilted_moments(const double* u, const double* w, std::size_t n,
                             double shift, double scale, double slope);

// Convenience overloads.
inline double dot(const std::vector<double>& x, const std::vector<double>& y) {
  return dot(x.data(), y.data(), x.size());
}
inline double nrm2sq(const std::vector<double>& x) {
  return nrm2sq(x.data(), x.size());
}

}  // namespace spider3p::kern
