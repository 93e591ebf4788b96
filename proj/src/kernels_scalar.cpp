#include <cmath>

#include "kernels_detail.hpp"

namespace spider3p::kern::detail {

namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double nrm2sq_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

double sum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scal_scalar(double alpha, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

inline double sigmoid_stable(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

TiltedMoments tilted_moments_scalar(const double* u, const double* w,
                                    std::size_t n, double shift, double scale,
                                    double slope) {
  TiltedMoments m;
  for (std::size_t j = 0; j < n; ++j) {
    const double z = shift + scale * u[j];
    const double wj = w[j] * sigmoid_stable(slope * z);
    m.s0 += wj;
    m.s1 += wj * z;
    m.s2 += wj * z * z;
  }
  return m;
}

constexpr Ops kScalarOps = {dot_scalar, nrm2sq_scalar,        sum_scalar,
                            axpy_scalar, scal_scalar, tilted_moments_scalar};

}  // namespace

const Ops* scalar_ops() { return &kScalarOps; }

}  // namespace spider3p::kern::detail
