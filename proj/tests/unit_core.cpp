#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "spider3p/gauss_hermite.hpp"
#include "spider3p/kernels.hpp"
#include "spider3p/linalg.hpp"
#include "spider3p/rng.hpp"
#include "support/test_util.hpp"

using namespace spider3p;

TEST_CASE("rng: identical keys give bit-identical streams") {
  RngStream a = RngStream::derive(42, {2, 3, 7, 0});
  RngStream b = RngStream::derive(42, {2, 3, 7, 0});
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: distinct keys diverge") {
  RngStream a = RngStream::derive(42, {2, 3, 7, 0});
  RngStream b = RngStream::derive(42, {2, 3, 7, 1});
  RngStream c = RngStream::derive(43, {2, 3, 7, 0});
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t x = a.next_u64();
    if (x == b.next_u64()) ++same_ab;
    if (x == c.next_u64()) ++same_ac;
  }
  CHECK(same_ab == 0);
  CHECK(same_ac == 0);
}

TEST_CASE("rng: uniform and normal moments") {
  RngStream rng(7);
  const int n = 200000;
  double su = 0.0, su2 = 0.0, sn = 0.0, sn2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_unit();
    su += u;
    su2 += u * u;
    const double z = rng.next_normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(su2 / n == doctest::Approx(1.0 / 3.0).epsilon(0.02));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("rng: bounded draws are in range and roughly uniform") {
  RngStream rng(11);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) counts[rng.next_below(7)]++;
  for (int c : counts) CHECK(std::abs(c - n / 7) < 5 * std::sqrt(n / 7.0));
}

TEST_CASE("kernels: active backend reports support") {
  CHECK(kern::backend_supported(kern::Backend::scalar));
  INFO("active backend: ", kern::backend_name(kern::active_backend()));
  CHECK((kern::active_backend() == kern::Backend::scalar ||
         kern::backend_supported(kern::Backend::avx2)));
}

TEST_CASE("kernels: simd variants agree with the scalar reference") {
  if (!kern::backend_supported(kern::Backend::avx2)) return;
  RngStream rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.next_below(300);
    Vec x = test_util::random_vec(static_cast<int>(n), rng, 2.0);
    Vec y = test_util::random_vec(static_cast<int>(n), rng, 2.0);
    Vec u = test_util::random_vec(static_cast<int>(n), rng, 1.5);
    Vec w(n);
    for (double& v : w) v = 0.01 + rng.next_unit();
    const double shift = rng.next_normal();
    const double scale = 0.2 + rng.next_unit();
    const double slope = 4.0 * rng.next_normal();

    REQUIRE(kern::set_backend(kern::Backend::scalar));
    const double dot_s = kern::dot(x.data(), y.data(), n);
    const double nrm_s = kern::nrm2sq(x.data(), n);
    const double sum_s = kern::sum(x.data(), n);
    Vec axpy_s = y;
    kern::axpy(0.7, x.data(), axpy_s.data(), n);
    const kern::TiltedMoments tm_s =
        kern::tilted_moments(u.data(), w.data(), n, shift, scale, slope);

    REQUIRE(kern::set_backend(kern::Backend::avx2));
    const double dot_v = kern::dot(x.data(), y.data(), n);
    const double nrm_v = kern::nrm2sq(x.data(), n);
    const double sum_v = kern::sum(x.data(), n);
    Vec axpy_v = y;
    kern::axpy(0.7, x.data(), axpy_v.data(), n);
    const kern::TiltedMoments tm_v =
        kern::tilted_moments(u.data(), w.data(), n, shift, scale, slope);

    REQUIRE(kern::set_backend(kern::Backend::scalar));
    const double scale_dot = std::max(1.0, std::abs(dot_s));
    CHECK(std::abs(dot_s - dot_v) < 1e-12 * n * scale_dot);
    CHECK(std::abs(nrm_s - nrm_v) < 1e-12 * n * std::max(1.0, nrm_s));
    CHECK(std::abs(sum_s - sum_v) < 1e-12 * n * std::max(1.0, std::abs(sum_s)));
    CHECK(max_abs_diff(axpy_s, axpy_v) < 1e-12);
    CHECK(std::abs(tm_s.s0 - tm_v.s0) < 1e-11 * std::max(1.0, std::abs(tm_s.s0)));
    CHECK(std::abs(tm_s.s1 - tm_v.s1) < 1e-11 * std::max(1.0, std::abs(tm_s.s1)) + 1e-12);
    CHECK(std::abs(tm_s.s2 - tm_v.s2) < 1e-11 * std::max(1.0, std::abs(tm_s.s2)) + 1e-12);
  }
  // Restore the default for the rest of the binary.
  kern::set_backend(kern::backend_supported(kern::Backend::avx2) ? kern::Backend::avx2
                                                                 : kern::Backend::scalar);
}

TEST_CASE("kernels: tilted moments match a direct loop") {
  RngStream rng(9);
  const std::size_t n = 64;
  Vec u = test_util::random_vec(static_cast<int>(n), rng);
  Vec w(n);
  for (double& v : w) v = rng.next_unit() + 0.01;
  const double shift = 0.3, scale = 0.8, slope = -2.5;
  const kern::TiltedMoments tm = kern::tilted_moments(u.data(), w.data(), n, shift, scale, slope);
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double z = shift + scale * u[j];
    const double sig = 1.0 / (1.0 + std::exp(-slope * z));
    s0 += w[j] * sig;
    s1 += w[j] * sig * z;
    s2 += w[j] * sig * z * z;
  }
  CHECK(tm.s0 == doctest::Approx(s0).epsilon(1e-12));
  CHECK(tm.s1 == doctest::Approx(s1).epsilon(1e-12));
  CHECK(tm.s2 == doctest::Approx(s2).epsilon(1e-12));
}

TEST_CASE("linalg: cholesky solves and inverts SPD systems") {
  RngStream rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int q = 2 + static_cast<int>(rng.next_below(8));
    const Matrix a = test_util::random_spd(q, 0.5 * q, rng);
    auto chol = CholeskyFactor::compute(a);
    REQUIRE(chol.has_value());
    const Vec b = test_util::random_vec(q, rng);
    const Vec x = chol->solve(b);
    const Vec back = matvec(a, x);
    CHECK(max_abs_diff(back, b) < 1e-9);

    Matrix prod = matmul(a, chol->inverse());
    for (int i = 0; i < q; ++i) prod(i, i) -= 1.0;
    CHECK(max_abs(prod) < 1e-10);
  }
}

TEST_CASE("linalg: cholesky rejects indefinite matrices") {
  Matrix m(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = -1.0;
  CHECK(!CholeskyFactor::compute(m).has_value());
}

TEST_CASE("linalg: jacobi reproduces known spectra") {
  Matrix m(2, 2);
  m(0, 0) = 2.0;
  m(1, 1) = 1.0;
  m(0, 1) = m(1, 0) = 1.0;
  const SymEigen eig = jacobi_eigensym(m);
  // Eigenvalues of [[2,1],[1,1]] are (3 +/- sqrt(5))/2.
  CHECK(eig.values[0] == doctest::Approx((3.0 - std::sqrt(5.0)) / 2.0).epsilon(1e-12));
  CHECK(eig.values[1] == doctest::Approx((3.0 + std::sqrt(5.0)) / 2.0).epsilon(1e-12));

  RngStream rng(21);
  const int q = 12;
  const Matrix a = test_util::random_spd(q, 1.0, rng);
  const SymEigen e = jacobi_eigensym(a);
  // A v = lambda v for every pair.
  for (int j = 0; j < q; ++j) {
    Vec v(q);
    for (int i = 0; i < q; ++i) v[i] = e.vectors(i, j);
    const Vec av = matvec(a, v);
    for (int i = 0; i < q; ++i) CHECK(av[i] == doctest::Approx(e.values[j] * v[i]).epsilon(1e-8));
  }
}

TEST_CASE("gauss-hermite: weights and polynomial moments") {
  for (int n : {16, 64, 256}) {
    const GaussHermiteRule& rule = gauss_hermite_rule(n);
    double mass = 0.0, m2 = 0.0, m4 = 0.0;
    for (int j = 0; j < n; ++j) {
      mass += rule.weights[j];
      m2 += rule.weights[j] * rule.nodes[j] * rule.nodes[j];
      m4 += rule.weights[j] * std::pow(rule.nodes[j], 4);
    }
    const double sqrt_pi = std::sqrt(M_PI);
    CHECK(mass == doctest::Approx(sqrt_pi).epsilon(1e-12));
    CHECK(m2 == doctest::Approx(0.5 * sqrt_pi).epsilon(1e-11));      // mean of u^2 = 1/2
    CHECK(m4 == doctest::Approx(0.75 * sqrt_pi).epsilon(1e-11));     // mean of u^4 = 3/4
  }
}

TEST_CASE("gauss-hermite: gaussian expectation via substitution") {
  // E[f(Z)] for Z ~ N(mu, sigma^2) with f(z) = z^2: mu^2 + sigma^2.
  const GaussHermiteRule& rule = gauss_hermite_rule(64);
  const double mu = 0.7, sigma = 1.3;
  double acc = 0.0;
  for (int j = 0; j < rule.n; ++j) {
    const double z = mu + std::sqrt(2.0) * sigma * rule.nodes[j];
    acc += rule.weights[j] * z * z;
  }
  acc /= std::sqrt(M_PI);
  CHECK(acc == doctest::Approx(mu * mu + sigma * sigma).epsilon(1e-12));
}
