#include "spider3p/baselines.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "spider3p/errors.hpp"

namespace spider3p {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

Trajectory run_prox_online_em(const OnlineConfig& config, const GradientOracle& oracle,
                              const Preconditioner& precond, const Regularizer& reg) {
  if (config.iterations < 1 || config.b < 1 || config.m < 1 || !(config.gamma > 0.0)) {
    throw ConfigError("run_prox_online_em: sizes and gamma must be positive");
  }
  const auto start = Clock::now();
  const int q = oracle.dim();
  const int n = oracle.size();
  const bool use_mc = config.oracle_mode == OracleMode::exact
                          ? false
                          : (oracle.has_mc() || config.oracle_mode == OracleMode::monte_carlo);
  if (use_mc && !oracle.has_mc()) throw ConfigError("run_prox_online_em: no MC capability");
  if (!use_mc && !oracle.has_exact()) throw ConfigError("run_prox_online_em: no exact capability");

  Trajectory traj;
  traj.algo = AlgoKind::online_em;
  traj.k_out = config.iterations;
  traj.k_in = 0;
  traj.gamma = config.gamma;

  Matrix b_scratch;
  if (config.init.empty()) {
    StateVector zero(q, 0.0);
    traj.init = weighted_prox(precond.eval(zero, b_scratch), 1.0, reg, zero, config.prox);
  } else {
    if (static_cast<int>(config.init.size()) != q) {
      throw ConfigError("run_prox_online_em: init dimension mismatch");
    }
    traj.init = config.init;
  }

  MinibatchSampler sampler(n, config.b, config.sampling);
  StateVector s = traj.init;
  StateVector grad(q);
  StateVector tmp(q);
  std::vector<int> batch;
  Counters counters;

  for (int t = 1; t <= config.iterations; ++t) {
    const double gamma_t = config.step == OnlineConfig::StepKind::constant
                               ? config.gamma
                               : config.gamma / t;
    RngStream batch_rng = RngStream::derive(
        config.seed, {kBatchStream, static_cast<std::uint64_t>(t), 0});
    sampler.sample(batch_rng, batch);

    std::fill(grad.begin(), grad.end(), 0.0);
    for (int i : batch) {
      if (use_mc) {
        RngStream mc_rng = RngStream::derive(
            config.seed, {kMcStream, static_cast<std::uint64_t>(t), 0,
                          static_cast<std::uint64_t>(i), 0});
        try {
          oracle.eval_mc(i, s, config.m, mc_rng, tmp.data());
        } catch (const NumericalError& e) {
          std::ostringstream msg;
          msg << "oracle failure at (t=" << t << ", i=" << i << "): " << e.what();
          throw NumericalError(msg.str());
        }
        counters.mc_draws += config.m;
      } else {
        oracle.eval_exact(i, s, tmp.data());
      }
      counters.component_evals += 1;
      kern::axpy(1.0, tmp.data(), grad.data(), q);
    }
    kern::scal(1.0 / config.b, grad.data(), q);

    StateVector half = add_scaled(s, gamma_t, grad);
    StateVector next =
        weighted_prox(precond.eval(s, b_scratch), gamma_t, reg, half, config.prox);
    counters.prox_calls += 1;
    if (!all_finite(next)) {
      throw NumericalError("run_prox_online_em: non-finite iterate at t=" +
                           std::to_string(t));
    }
    StepRecord rec;
    rec.t = t;
    rec.k = 0;
    rec.delta_hat = nrm2sq_diff(next, s) / (gamma_t * gamma_t);
    rec.gamma = gamma_t;
    rec.m = use_mc ? config.m : 0;
    rec.wall_ms = ms_since(start);
    rec.counters = counters;
    rec.state = next;
    traj.steps.push_back(std::move(rec));
    s = std::move(next);
  }

  traj.final_state = s;
  traj.counters = counters;
  traj.stop_t = config.iterations;
  traj.stop_k = 0;
  traj.delta_hat_at_stop = traj.steps.back().delta_hat;
  traj.wall_ms = ms_since(start);
  return traj;
}

Trajectory run_full_prox_gradient(int iterations, double gamma,
                                  const GradientOracle& oracle,
                                  const Preconditioner& precond, const Regularizer& reg,
                                  const StateVector& init, const ProxOptions& opts) {
  if (iterations < 1 || !(gamma > 0.0)) {
    throw ConfigError("run_full_prox_gradient: iterations and gamma must be positive");
  }
  if (!oracle.has_exact()) {
    throw ConfigError("run_full_prox_gradient: oracle has no exact capability");
  }
  const auto start = Clock::now();
  Trajectory traj;
  traj.algo = AlgoKind::full_gradient;
  traj.k_out = iterations;
  traj.k_in = 0;
  traj.gamma = gamma;
  traj.init = init;

  Matrix b_scratch;
  StateVector s = init;
  Counters counters;
  for (int t = 1; t <= iterations; ++t) {
    StateVector h = mean_field(oracle, s);
    counters.component_evals += oracle.size();
    StateVector half = add_scaled(s, gamma, h);
    StateVector next = weighted_prox(precond.eval(s, b_scratch), gamma, reg, half, opts);
    counters.prox_calls += 1;
    if (!all_finite(next)) {
      throw NumericalError("run_full_prox_gradient: non-finite iterate at t=" +
                           std::to_string(t));
    }
    StepRecord rec;
    rec.t = t;
    rec.k = 0;
    rec.delta_hat = nrm2sq_diff(next, s) / (gamma * gamma);
    rec.gamma = gamma;
    rec.m = 0;
    rec.wall_ms = ms_since(start);
    rec.counters = counters;
    rec.state = next;
    traj.steps.push_back(std::move(rec));
    s = std::move(next);
  }
  traj.final_state = s;
  traj.counters = counters;
  traj.stop_t = iterations;
  traj.stop_k = 0;
  traj.delta_hat_at_stop = traj.steps.back().delta_hat;
  traj.wall_ms = ms_since(start);
  return traj;
}

}  // namespace spider3p
