#pragma once

#include <cstddef>

#include "spider3p/kernels.hpp"

namespace spider3p::kern::detail {

struct Ops {
  double (*dot)(const double*, const double*, std::size_t);
  double (*nrm2sq)(const double*, std::size_t);
  double (*sum)(const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*scal)(double, double*, std::size_t);
  TiltedMoments (*tilted_moments)(const double*, const double*, std::size_t,
                                  double, double, double);
};

const Ops* scalar_ops();
const Ops* avx2_ops();  // nullptr when not compiled in or not supported by the CPU

}  // namespace spider3p::kern::detail
