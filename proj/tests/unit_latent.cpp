#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "spider3p/baselines.hpp"
#include "spider3p/errors.hpp"
#include "spider3p/gauss_hermite.hpp"
#include "spider3p/latent_logistic.hpp"
#include "spider3p/spider.hpp"
#include "support/test_util.hpp"

using namespace spider3p;
namespace lat = spider3p::latent;

namespace {

constexpr double kLn2 = 0.69314718055994530941723212145818;

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Independent 1-D oracle: trapezoid moments of sigmoid(a z) N(z; mu, s2).
struct TrapezoidMoments {
  double mass = 0.0;
  double mean = 0.0;
};

TrapezoidMoments trapezoid_tilted(double mu, double a, double s2, long points = 1000000) {
  const double sigma = std::sqrt(s2);
  const double lo = mu - 10.0 * sigma;
  const double hi = mu + 10.0 * sigma;
  const double dz = (hi - lo) / points;
  double mass = 0.0;
  double first = 0.0;
  for (long i = 0; i <= points; ++i) {
    const double z = lo + i * dz;
    const double w = (i == 0 || i == points) ? 0.5 : 1.0;
    const double dens = sigmoid(a * z) *
                        std::exp(-(z - mu) * (z - mu) / (2.0 * s2)) /
                        std::sqrt(2.0 * M_PI * s2);
    mass += w * dens;
    first += w * dens * z;
  }
  mass *= dz;
  first *= dz;
  return {mass, first / mass};
}

lat::Dataset toy_dataset() {
  lat::SyntheticSpec spec;
  spec.n = 4;
  spec.d = 2;
  spec.sigma2 = 0.5;
  spec.theta_scale = 1.0;
  spec.seed = 20240811;
  return lat::generate_synthetic(spec);
}

const lat::ModelParams kToyParams{0.5, 1.0};

}  // namespace

TEST_CASE("compute_omega: hand-checkable single-row instance") {
  lat::Dataset ds;
  ds.x = Matrix(1, 2, 0.0);
  ds.x(0, 0) = 1.0;
  ds.y = {1};
  ds.row_norms = {1.0};
  const lat::OmegaMatrix omega = lat::compute_omega(ds, lat::ModelParams{1.0, 1.0});
  // Omega = inverse of diag(1, 0) + 2 I = diag(1/3, 1/2).
  CHECK(omega.omega()(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(omega.omega()(1, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(omega.omega()(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(omega.lambda_min() == doctest::Approx(1.0 / 3.0).epsilon(1e-10));
  CHECK(omega.lambda_max() == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("compute_omega: large tau limit and factorization quality") {
  const lat::Dataset ds = toy_dataset();
  const double tau = 1e6;
  const lat::OmegaMatrix omega = lat::compute_omega(ds, lat::ModelParams{0.5, tau});
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double want = i == j ? 1.0 / (2.0 * tau) : 0.0;
      CHECK(std::abs(omega.omega()(i, j) - want) <= 1e-6 / (2.0 * tau));
    }
  }

  lat::SyntheticSpec spec;
  spec.n = 50;
  spec.d = 5;
  spec.sigma2 = 0.1;
  spec.seed = 9;
  const lat::Dataset big = lat::generate_synthetic(spec);
  const lat::OmegaMatrix om = lat::compute_omega(big, lat::ModelParams{0.1, 1.0});
  Matrix prod = matmul(om.omega(), om.inverse());
  for (int i = 0; i < 5; ++i) prod(i, i) -= 1.0;
  CHECK(max_abs(prod) <= 1e-10);
  CHECK(om.lambda_min() > 0.0);
}

TEST_CASE("posterior: tilted and exponential-family forms differ by a constant") {
  const lat::Dataset ds = toy_dataset();
  Vec theta{0.3, -0.4};
  RngStream rng(3);
  for (int i = 0; i < ds.n(); ++i) {
    const lat::PosteriorSpec spec = lat::PosteriorSpec::make(i, theta, ds, kToyParams);
    std::vector<double> ratios;
    for (int p = 0; p < 100; ++p) {
      const double z = 4.0 * rng.next_normal();
      ratios.push_back(spec.log_density_tilted(z) - spec.log_density_expfam(z));
    }
    const auto ms = test_util::mean_se(ratios);
    CHECK(ms.se * std::sqrt(100.0) <= 1e-10);  // sample SD of the log-ratio
    const double expect = -spec.mu * spec.mu / (2.0 * spec.sigma2) -
                          0.5 * std::log(2.0 * M_PI * spec.sigma2);
    CHECK(ratios.front() == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("quadrature: posterior mean matches a brute-force trapezoid") {
  // d = 1, X = 1, Y = 1, sigma^2 = 1, theta = 0.
  lat::Dataset ds;
  ds.x = Matrix(1, 1, 0.0);
  ds.x(0, 0) = 1.0;
  ds.y = {1};
  ds.row_norms = {1.0};
  const lat::ModelParams params{1.0, 1.0};
  const lat::OmegaMatrix omega = lat::compute_omega(ds, params);

  const Vec s{0.0};
  const Vec h = lat::h_component_quadrature(0, s, ds, params, omega, 64);
  const TrapezoidMoments ref = trapezoid_tilted(0.0, 1.0, 1.0);
  // h_0(s) = X E[z]/sigma^2 - s.
  CHECK(std::abs(h[0] - ref.mean) <= 1e-8);

  // Constant logistic weight (slope -> 0) keeps the proposal mean.
  const GaussHermiteRule& rule = gauss_hermite_rule(64);
  const kern::TiltedMoments flat = kern::tilted_moments(
      rule.nodes.data(), rule.weights.data(), rule.nodes.size(), 0.7, 1.1, 0.0);
  CHECK(flat.s1 / flat.s0 == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("quadrature: node refinement is converged at 64 nodes") {
  const lat::Dataset ds = toy_dataset();
  const lat::OmegaMatrix omega = lat::compute_omega(ds, kToyParams);
  RngStream rng(5);
  const Vec s = test_util::random_vec(2, rng, 0.4);
  for (int i = 0; i < ds.n(); ++i) {
    const Vec h64 = lat::h_component_quadrature(i, s, ds, kToyParams, omega, 64);
    const Vec h256 = lat::h_component_quadrature(i, s, ds, kToyParams, omega, 256);
    CHECK(max_abs_diff(h64, h256) <= 1e-10);
  }
}

TEST_CASE("gradient identity: finite differences of W match -Omega h") {
  const lat::Dataset ds = toy_dataset();
  auto dsp = std::make_shared<lat::Dataset>(ds);
  const auto omega = std::make_shared<lat::OmegaMatrix>(lat::compute_omega(ds, kToyParams));
  const auto oracle = lat::make_oracles(dsp, kToyParams, omega, 64);
  const Regularizer reg = lat::constraint_set(*omega, kToyParams.tau);

  RngStream rng(7);
  for (int p = 0; p < 5; ++p) {
    Vec s = test_util::random_vec(2, rng);
    const double qf = quad_form(omega->omega(), s);
    kern::scal((0.2 + 0.6 * rng.next_unit()) * std::sqrt(reg.radius() / qf), s.data(), 2);

    const Vec h = mean_field(*oracle, s);
    Vec target = matvec(omega->omega(), h);
    kern::scal(-1.0, target.data(), 2);

    Vec fd(2);
    Vec sp = s;
    const double step = 1e-5;
    for (int j = 0; j < 2; ++j) {
      auto central = [&](double hstep) {
        sp[j] = s[j] + hstep;
        const double up = lat::objective_w(sp, ds, kToyParams, *omega, 64);
        sp[j] = s[j] - hstep;
        const double down = lat::objective_w(sp, ds, kToyParams, *omega, 64);
        sp[j] = s[j];
        return (up - down) / (2.0 * hstep);
      };
      fd[j] = (4.0 * central(0.5 * step) - central(step)) / 3.0;
    }
    const double rel =
        std::sqrt(nrm2sq_diff(fd, target)) / std::max(std::sqrt(nrm2sq(target)), 1e-12);
    CHECK(rel <= 1e-4);
  }
}

TEST_CASE("rejection sampler: agrees with quadrature and mirrors under label flip") {
  // Constant acceptance keeps the proposal law.
  lat::PosteriorSpec flat{0, 0.8, 0.0, 1.0};
  RngStream rng(11);
  std::vector<double> draws;
  for (int i = 0; i < 100000; ++i) draws.push_back(lat::sample_posterior(flat, rng));
  auto ms = test_util::mean_se(draws);
  CHECK(std::abs(ms.mean - 0.8) <= 4.0 * ms.se);

  // slope 1, mu 0, sigma^2 1: mean matches the quadrature value.
  lat::PosteriorSpec tilted{0, 0.0, 1.0, 1.0};
  const TrapezoidMoments ref = trapezoid_tilted(0.0, 1.0, 1.0);
  draws.clear();
  for (int i = 0; i < 1000000; ++i) draws.push_back(lat::sample_posterior(tilted, rng));
  ms = test_util::mean_se(draws);
  CHECK(std::abs(ms.mean - ref.mean) <= 4.0 * ms.se);

  // Y -> -Y mirrors the posterior around zero when mu = 0.
  lat::PosteriorSpec flipped{0, 0.0, -1.0, 1.0};
  std::vector<double> a, b;
  for (int i = 0; i < 20000; ++i) {
    a.push_back(lat::sample_posterior(tilted, rng));
    b.push_back(-lat::sample_posterior(flipped, rng));
  }
  const double ks = test_util::ks_statistic(a, b);
  CHECK(ks <= test_util::ks_critical_1pct(a.size(), b.size()));
}

TEST_CASE("rejection sampler: proposal cap surfaces scaling problems") {
  lat::PosteriorSpec hopeless{7, -50.0, 40.0, 0.01};  // acceptance ~ sigmoid(-2000)
  RngStream rng(13);
  try {
    lat::sample_posterior(hopeless, rng, 1000);
    CHECK(false);
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("component 7") != std::string::npos);
  }
}

TEST_CASE("oracle: capabilities, CLT agreement, determinism") {
  const lat::Dataset ds = toy_dataset();
  auto dsp = std::make_shared<lat::Dataset>(ds);
  const auto omega = std::make_shared<lat::OmegaMatrix>(lat::compute_omega(ds, kToyParams));
  const auto oracle = lat::make_oracles(dsp, kToyParams, omega, 64);
  CHECK(oracle->has_exact());
  CHECK(oracle->has_mc());
  CHECK(oracle->has_second_moment());

  RngStream rng(17);
  const Vec s = test_util::random_vec(2, rng, 0.3);
  const int i = 2;
  const Vec exact = oracle->exact(i, s);
  const double var_z = oracle->second_moment(i, s) * kToyParams.sigma2 * kToyParams.sigma2;

  const int m = 1000000;
  RngStream mc_rng = RngStream::derive(4242, {1});
  const Vec approx = oracle->mc(i, s, m, mc_rng);
  // ||hhat - h|| = |zbar - E z| / sigma^2 <= 4 sd(z) / (sigma^2 sqrt(m)).
  const double bound = 4.0 * std::sqrt(var_z) / (kToyParams.sigma2 * std::sqrt(double(m)));
  CHECK(std::sqrt(nrm2sq_diff(approx, exact)) <= bound);

  RngStream r1 = RngStream::derive(7, {3});
  RngStream r2 = RngStream::derive(7, {3});
  CHECK(oracle->mc(i, s, 32, r1) == oracle->mc(i, s, 32, r2));
}

TEST_CASE("constraint set: radius, feasibility, boundary fixed point") {
  const lat::OmegaMatrix identity(Matrix::identity(2), Matrix::identity(2), 1.0, 1.0);
  const Regularizer reg = lat::constraint_set(identity, 1.0);
  CHECK(reg.radius() == doctest::Approx(2.0 * kLn2).epsilon(1e-15));

  CHECK(reg.feasible(Vec(2, 0.0)));
  const double r = reg.radius();
  const Vec boundary{std::sqrt(r), 0.0};
  const Vec projected = weighted_prox(Matrix::identity(2), 1.0, reg, boundary);
  CHECK(projected == boundary);
}

TEST_CASE("objective: value at zero, refinement, independent reimplementation") {
  const lat::Dataset ds = toy_dataset();
  const lat::OmegaMatrix omega = lat::compute_omega(ds, kToyParams);

  const double f0 = lat::objective_f(Vec(2, 0.0), ds, kToyParams, omega, 64);
  CHECK(f0 == doctest::Approx(kLn2).epsilon(1e-12));

  RngStream rng(19);
  const Vec theta = test_util::random_vec(2, rng, 0.4);
  const double f64 = lat::objective_f(theta, ds, kToyParams, omega, 64);
  const double f256 = lat::objective_f(theta, ds, kToyParams, omega, 256);
  CHECK(std::abs(f64 - f256) <= 1e-9);

  // Straight-line trapezoid implementation of the same objective.
  double acc = 0.0;
  for (int i = 0; i < ds.n(); ++i) {
    const double mu = kern::dot(ds.x.row(i), theta.data(), 2) / ds.row_norms[i];
    const double a = ds.y[i] * ds.row_norms[i];
    const TrapezoidMoments tm = trapezoid_tilted(mu, a, kToyParams.sigma2);
    acc += -(mu * mu / (2.0 * kToyParams.sigma2) + std::log(tm.mass));
  }
  const double f_ref = acc / ds.n() + 0.5 * quad_form(omega.inverse(), theta);
  CHECK(f64 == doctest::Approx(f_ref).epsilon(1e-7));
}

TEST_CASE("fixed-point residual on the toy instance matches a recomputation") {
  const lat::Dataset ds = toy_dataset();
  auto dsp = std::make_shared<lat::Dataset>(ds);
  const auto omega = std::make_shared<lat::OmegaMatrix>(lat::compute_omega(ds, kToyParams));
  const auto oracle = lat::make_oracles(dsp, kToyParams, omega, 64);
  const Preconditioner precond = lat::make_preconditioner(*omega);
  const Regularizer reg = lat::constraint_set(*omega, kToyParams.tau);

  const Vec zero(2, 0.0);
  const double gamma = 0.25;
  const double got = prox_fixed_point_residual(
      zero, zero, gamma, [&](const StateVector& s) { return mean_field(*oracle, s); },
      precond, reg);

  // Straight-line recomputation: average per-row trapezoid contributions, one
  // radial projection, norm ratio.
  Vec h(2, 0.0);
  for (int i = 0; i < ds.n(); ++i) {
    const double a = ds.y[i] * ds.row_norms[i];
    const TrapezoidMoments tm = trapezoid_tilted(0.0, a, kToyParams.sigma2);
    const double coeff = tm.mean / (ds.row_norms[i] * kToyParams.sigma2);
    for (int j = 0; j < 2; ++j) h[j] += coeff * ds.x(i, j) / ds.n();
  }
  Vec arg = h;
  kern::scal(gamma, arg.data(), 2);
  const double qf = quad_form(omega->omega(), arg);
  if (qf > reg.radius()) kern::scal(std::sqrt(reg.radius() / qf), arg.data(), 2);
  const double want = nrm2sq(arg) / (gamma * gamma);
  CHECK(got == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("synthetic generator: balance, determinism, separability") {
  lat::SyntheticSpec spec;
  spec.n = 10000;
  spec.d = 3;
  spec.sigma2 = 0.5;
  spec.theta_scale = 0.0;  // theta_star = 0: labels are fair coin flips
  spec.seed = 31;
  const lat::Dataset balanced = lat::generate_synthetic(spec);
  long pos = 0;
  for (int y : balanced.y) pos += y > 0;
  CHECK(std::abs(static_cast<double>(pos) / spec.n - 0.5) <= 0.01);

  lat::SyntheticSpec again = spec;
  const lat::Dataset a = lat::generate_synthetic(spec);
  const lat::Dataset b = lat::generate_synthetic(again);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);

  lat::SyntheticSpec strong;
  strong.n = 2000;
  strong.d = 1;
  strong.sigma2 = 0.5;
  strong.theta_scale = 8.0;
  strong.seed = 33;
  Vec theta_star;
  const lat::Dataset sep = lat::generate_synthetic(strong, &theta_star);
  long correct = 0;
  for (int i = 0; i < sep.n(); ++i) {
    const double margin = sep.x(i, 0) * theta_star[0];
    correct += (margin > 0) == (sep.y[i] > 0);
  }
  CHECK(static_cast<double>(correct) / sep.n() >= 0.9);
}

TEST_CASE("dataset csv: lossless round trip and strict validation") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "spider3p_latent_test";
  fs::create_directories(dir);
  const std::string path = (dir / "ds.csv").string();

  const lat::Dataset ds = toy_dataset();
  lat::save_dataset_csv(ds, path);
  const lat::Dataset back = lat::load_dataset_csv(path);
  CHECK(back.x == ds.x);
  CHECK(back.y == ds.y);

  auto write_file = [&](const std::string& body) {
    std::ofstream out(path);
    out << body;
  };

  write_file("y,x1,x2\n1,0,0\n-1,1,1\n");
  try {
    lat::load_dataset_csv(path);
    CHECK(false);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("zero-norm") != std::string::npos);
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }

  write_file("y,x1\n2,1.0\n");
  CHECK_THROWS_AS(lat::load_dataset_csv(path), ConfigError);
  write_file("label,x1\n1,1.0\n");
  CHECK_THROWS_AS(lat::load_dataset_csv(path), ConfigError);
  write_file("y,x1\n1,1.0,5.0\n");
  CHECK_THROWS_AS(lat::load_dataset_csv(path), ConfigError);
  CHECK_THROWS_AS(lat::load_dataset_csv((dir / "missing.csv").string()), IoError);
}

TEST_CASE("feasibility radius: long deterministic run stays in the theta ball") {
  lat::SyntheticSpec spec;
  spec.n = 40;
  spec.d = 3;
  spec.sigma2 = 0.5;
  spec.theta_scale = 1.5;
  spec.seed = 37;
  const lat::Dataset ds = lat::generate_synthetic(spec);
  const lat::ModelParams params{0.5, 1.0};
  auto dsp = std::make_shared<lat::Dataset>(ds);
  const auto omega = std::make_shared<lat::OmegaMatrix>(lat::compute_omega(ds, params));
  const auto oracle = lat::make_oracles(dsp, params, omega, 64);
  const Preconditioner precond = lat::make_preconditioner(*omega);
  const Regularizer reg = lat::constraint_set(*omega, params.tau);
  const LipschitzData lip = lat::estimate_lipschitz(*omega, params);

  const double gamma = 0.9 * precond.v_min() / lip.grad_w;
  const Trajectory traj = run_full_prox_gradient(2000, gamma, *oracle, precond, reg,
                                                 Vec(3, 0.0));
  const Vec theta_hat = omega->to_theta(traj.final_state);
  CHECK(params.tau * nrm2sq(theta_hat) <= 2.0 * kLn2 + 1e-6);
  // The run has settled: the last steps barely move.
  CHECK(traj.steps.back().delta_hat <= 1e-10);
}

TEST_CASE("estimate_cv: quadrature surrogate matches empirical MC variances") {
  const lat::Dataset ds = toy_dataset();
  auto dsp = std::make_shared<lat::Dataset>(ds);
  const auto omega = std::make_shared<lat::OmegaMatrix>(lat::compute_omega(ds, kToyParams));
  const auto oracle = lat::make_oracles(dsp, kToyParams, omega, 64);
  const Regularizer reg = lat::constraint_set(*omega, kToyParams.tau);

  RngStream rng(41);
  std::vector<StateVector> states;
  for (int i = 0; i < 10; ++i) {
    states.push_back(test_util::random_vec(2, rng));
    const double qf = quad_form(omega->omega(), states.back());
    kern::scal((0.1 + 0.8 * rng.next_unit()) * std::sqrt(reg.radius() / qf),
               states.back().data(), 2);
  }
  const double cv_quad = estimate_cv(*oracle, states);

  // Empirical counterpart: per-index sample variances of H_i from raw draws.
  const int draws = 10000;
  double best = 0.0;
  for (const StateVector& s : states) {
    const Vec theta = omega->to_theta(s);
    double acc = 0.0;
    for (int i = 0; i < ds.n(); ++i) {
      const lat::PosteriorSpec spec = lat::PosteriorSpec::make(i, theta, ds, kToyParams);
      double zsum = 0.0, zsq = 0.0;
      for (int r = 0; r < draws; ++r) {
        const double z = lat::sample_posterior(spec, rng);
        zsum += z;
        zsq += z * z;
      }
      const double mean = zsum / draws;
      const double var = (zsq - draws * mean * mean) / (draws - 1);
      acc += var / (kToyParams.sigma2 * kToyParams.sigma2);
    }
    best = std::max(best, 2.0 * acc / ds.n());
  }
  CHECK(std::abs(cv_quad - best) <= 0.05 * cv_quad);
}

TEST_CASE("rejection sampler: mean matches quadrature over random posteriors") {
  const lat::Dataset ds = toy_dataset();
  const lat::OmegaMatrix omega = lat::compute_omega(ds, kToyParams);
  const GaussHermiteRule& rule = gauss_hermite_rule(64);
  RngStream rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    const int i = static_cast<int>(rng.next_below(ds.n()));
    const Vec theta = test_util::random_vec(2, rng, 0.6);
    const lat::PosteriorSpec spec = lat::PosteriorSpec::make(i, theta, ds, kToyParams);
    const kern::TiltedMoments tm = kern::tilted_moments(
        rule.nodes.data(), rule.weights.data(), rule.nodes.size(), spec.mu,
        std::sqrt(2.0 * spec.sigma2), spec.slope);
    const double quad_mean = tm.s1 / tm.s0;
    const double quad_sd =
        std::sqrt(std::max(0.0, tm.s2 / tm.s0 - quad_mean * quad_mean));

    const int draws = 100000;
    double acc = 0.0;
    for (int r = 0; r < draws; ++r) acc += lat::sample_posterior(spec, rng);
    const double emp_mean = acc / draws;
    CHECK(std::abs(emp_mean - quad_mean) <= 4.0 * quad_sd / std::sqrt(double(draws)));
  }
}
