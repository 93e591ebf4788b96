#include "spider3p/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "kernels_detail.hpp"

namespace spider3p::kern {

namespace {

using detail::Ops;

const Ops* resolve_default() {
  const char* env = std::getenv("SPIDER3P_KERNELS");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return detail::scalar_ops();
    if (std::strcmp(env, "avx2") == 0 && detail::avx2_ops() != nullptr) {
      return detail::avx2_ops();
    }
  }
  if (const Ops* avx2 = detail::avx2_ops()) return avx2;
  return detail::scalar_ops();
}

std::atomic<const Ops*>& active_slot() {
  static std::atomic<const Ops*> slot{resolve_default()};
  return slot;
}

inline const Ops* active() { return active_slot().load(std::memory_order_relaxed); }

}  // namespace

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
  }
  return "?";
}

Backend active_backend() {
  return active() == detail::scalar_ops() ? Backend::scalar : Backend::avx2;
}

bool backend_supported(Backend b) {
  if (b == Backend::scalar) return true;
  return detail::avx2_ops() != nullptr;
}

bool set_backend(Backend b) {
  const Ops* ops = b == Backend::scalar ? detail::scalar_ops() : detail::avx2_ops();
  if (ops == nullptr) return false;
  active_slot().store(ops, std::memory_order_relaxed);
  return true;
}

double dot(const double* x, const double* y, std::size_t n) {
  return active()->dot(x, y, n);
}

double nrm2sq(const double* x, std::size_t n) { return active()->nrm2sq(x, n); }

double sum(const double* x, std::size_t n) { return active()->sum(x, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active()->axpy(alpha, x, y, n);
}

void scal(double alpha, double* x, std::size_t n) { active()->scal(alpha, x, n); }

TiltedMoments tilted_moments(const double* u, const double* w, std::size_t n,
                             double shift, double scale, double slope) {
  return active()->tilted_moments(u, w, n, shift, scale, slope);
}

}  // namespace spider3p::kern
