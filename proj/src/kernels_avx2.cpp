// AVX2+FMA kernel variants. Compiled with -mavx2 -mfma on x86-64 only; the
// dispatcher checks CPU support at runtime before selecting them.

#include "kernels_detail.hpp"

#if defined(SPIDER3P_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>
#include <cstdint>

namespace spider3p::kern::detail {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

// exp(x) for x <= 0, Cephes-style: range reduction x = n*ln2 + r followed by
// a rational approximation of exp(r) on [-ln2/2, ln2/2]. Inputs below -708
// flush to zero.
inline __m256d exp_pd_nonpos(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878e-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910e-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042e-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192e-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766e-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000005e0);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d underflow = _mm256_set1_pd(-708.0);

  __m256d xc = _mm256_max_pd(x, underflow);
  __m256d n = _mm256_round_pd(_mm256_mul_pd(log2e, xc),
                              _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, c1, xc);
  r = _mm256_fnmadd_pd(n, c2, r);

  __m256d rr = _mm256_mul_pd(r, r);
  __m256d px = _mm256_fmadd_pd(p0, rr, p1);
  px = _mm256_fmadd_pd(px, rr, p2);
  px = _mm256_mul_pd(px, r);
  __m256d qx = _mm256_fmadd_pd(q0, rr, q1);
  qx = _mm256_fmadd_pd(qx, rr, q2);
  qx = _mm256_fmadd_pd(qx, rr, q3);
  __m256d e = _mm256_add_pd(
      one, _mm256_div_pd(_mm256_mul_pd(two, px), _mm256_sub_pd(qx, px)));

  // 2^n via exponent-field construction; n is in [-1022, 1] here.
  __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i n64 = _mm256_cvtepi32_epi64(n32);
  __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  __m256d pow2n = _mm256_castsi256_pd(bits);
  e = _mm256_mul_pd(e, pow2n);

  __m256d flush = _mm256_cmp_pd(x, underflow, _CMP_LT_OQ);
  return _mm256_andnot_pd(flush, e);
}

// 1/(1+exp(-t)) lane-wise, evaluated through exp of a non-positive argument.
inline __m256d sigmoid_pd(__m256d t) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  __m256d neg_abs = _mm256_min_pd(t, _mm256_sub_pd(zero, t));
  __m256d e = exp_pd_nonpos(neg_abs);
  __m256d denom = _mm256_add_pd(one, e);
  __m256d is_neg = _mm256_cmp_pd(t, zero, _CMP_LT_OQ);
  __m256d numer = _mm256_blendv_pd(one, e, is_neg);
  return _mm256_div_pd(numer, denom);
}

inline double sigmoid_stable(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  double out = hsum(acc);
  for (; i < n; ++i) out += x[i] * y[i];
  return out;
}

double nrm2sq_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double out = hsum(acc);
  for (; i < n; ++i) out += x[i] * x[i];
  return out;
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double out = hsum(acc);
  for (; i < n; ++i) out += x[i];
  return out;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_fmadd_pd(a, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(y + i, v);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scal_avx2(double alpha, double* x, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(a, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

TiltedMoments tilted_moments_avx2(const double* u, const double* w,
                                  std::size_t n, double shift, double scale,
                                  double slope) {
  const __m256d vshift = _mm256_set1_pd(shift);
  const __m256d vscale = _mm256_set1_pd(scale);
  const __m256d vslope = _mm256_set1_pd(slope);
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  __m256d a2 = _mm256_setzero_pd();
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d z = _mm256_fmadd_pd(vscale, _mm256_loadu_pd(u + j), vshift);
    __m256d sig = sigmoid_pd(_mm256_mul_pd(vslope, z));
    __m256d wj = _mm256_mul_pd(_mm256_loadu_pd(w + j), sig);
    a0 = _mm256_add_pd(a0, wj);
    __m256d wz = _mm256_mul_pd(wj, z);
    a1 = _mm256_add_pd(a1, wz);
    a2 = _mm256_fmadd_pd(wz, z, a2);
  }
  TiltedMoments m;
  m.s0 = hsum(a0);
  m.s1 = hsum(a1);
  m.s2 = hsum(a2);
  for (; j < n; ++j) {
    const double z = shift + scale * u[j];
    const double wj = w[j] * sigmoid_stable(slope * z);
    m.s0 += wj;
    m.s1 += wj * z;
    m.s2 += wj * z * z;
  }
  return m;
}

constexpr Ops kAvx2Ops = {dot_avx2, nrm2sq_avx2,      sum_avx2,
                          axpy_avx2, scal_avx2, tilted_moments_avx2};

}  // namespace

const Ops* avx2_ops() {
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
    return &kAvx2Ops;
  }
  return nullptr;
}

}  // namespace spider3p::kern::detail

#else  // !SPIDER3P_HAVE_AVX2

namespace spider3p::kern::detail {
const Ops* avx2_ops() { return nullptr; }
}  // namespace spider3p::kern::detail

#endif
