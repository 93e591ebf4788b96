#include "spider3p/spider.hpp"

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

// ceil() guarded against "10.000000000000002"-style representation noise.
std::int64_t iceil(double x) {
  return static_cast<std::int64_t>(std::ceil(x - 1e-12 * std::abs(x) - 1e-15));
}

bool resolve_use_mc(const RunConfig& config, const GradientOracle& oracle) {
  switch (config.oracle_mode) {
    case OracleMode::monte_carlo:
      if (!oracle.has_mc()) throw ConfigError("run: oracle has no Monte Carlo capability");
      return true;
    case OracleMode::exact:
      if (!oracle.has_exact()) throw ConfigError("run: oracle has no exact capability");
      return false;
    case OracleMode::automatic:
      if (oracle.has_mc()) return true;
      if (oracle.has_exact()) return false;
      throw ConfigError("run: oracle has no usable capability");
  }
  return true;
}

}  // namespace

int MSchedule::at(int t) const {
  int m = segments.front().m;
  for (const Segment& seg : segments) {
    if (t >= seg.from_t) m = seg.m;
  }
  return m;
}

void MSchedule::validate() const {
  if (segments.empty()) throw ConfigError("MSchedule: empty");
  if (segments.front().from_t != 1) throw ConfigError("MSchedule: first segment must start at t=1");
  int prev = 0;
  for (const Segment& seg : segments) {
    if (seg.from_t <= prev) throw ConfigError("MSchedule: segments must be strictly increasing in t");
    if (seg.m < 1) throw ConfigError("MSchedule: m must be >= 1");
    prev = seg.from_t;
  }
}

const StepRecord& Trajectory::at(int t, int k) const {
  return steps[static_cast<std::size_t>(t - 1) * (k_in + 1) + k];
}

const StateVector& Trajectory::state_before(int t, int k) const {
  if (k >= 1) return at(t, k - 1).state;
  return t >= 2 ? at(t - 1, k_in).state : init;
}

double gamma_star(double v_min, double v_max, double l_grad_w, double l, int k_in, int b) {
  if (!(v_min > 0.0) || !(v_max > 0.0) || !(l_grad_w > 0.0) || !(l > 0.0) || k_in < 1 || b < 1) {
    throw ConfigError("gamma_star: all arguments must be positive");
  }
  return v_min / (l_grad_w + 2.0 * l * v_max * std::sqrt(static_cast<double>(k_in)) /
                                std::sqrt(static_cast<double>(b)));
}

std::pair<int, int> draw_stop_time(int k_out, int k_in, RngStream& rng) {
  if (k_out < 1 || k_in < 0) throw ConfigError("draw_stop_time: invalid sizes");
  const int tau = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k_out)));
  const int k = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k_in) + 1));
  return {tau, k};
}

namespace {

struct EngineState {
  const RunConfig& config;
  const GradientOracle& oracle;
  const Preconditioner& precond;
  const Regularizer& reg;
  bool use_mc;
  Counters counters;
  Matrix b_scratch;

  void eval_component(int i, const StateVector& s, int m, int t, int k, int side,
                      double* out) {
    if (use_mc) {
      RngStream stream = RngStream::derive(
          config.seed, {kMcStream, static_cast<std::uint64_t>(t),
                        static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i),
                        static_cast<std::uint64_t>(side)});
      try {
        oracle.eval_mc(i, s, m, stream, out);
      } catch (const NumericalError& e) {
        std::ostringstream msg;
        msg << "oracle failure at (t=" << t << ", k=" << k << ", i=" << i
            << "): " << e.what();
        throw NumericalError(msg.str());
      }
      counters.mc_draws += m;
    } else {
      oracle.eval_exact(i, s, out);
    }
    counters.component_evals += 1;
  }

  // S_{t,0} = (1/n) sum_i hhat_i at `at_state` (full refresh) or the
  // subsampled b'-batch average.
  StateVector refresh_control_variate(int t, const StateVector& at_state,
                                      MinibatchSampler* refresh_sampler) {
    const int q = oracle.dim();
    const int m = config.m.at(t);
    StateVector acc(q, 0.0);
    StateVector tmp(q);
    if (config.refresh == RefreshMode::full) {
      const int n = oracle.size();
      for (int i = 0; i < n; ++i) {
        eval_component(i, at_state, m, t, 0, 0, tmp.data());
        kern::axpy(1.0, tmp.data(), acc.data(), q);
      }
      kern::scal(1.0 / n, acc.data(), q);
    } else {
      RngStream stream = RngStream::derive(
          config.seed, {kBatchStream, static_cast<std::uint64_t>(t), 0});
      std::vector<int> batch;
      refresh_sampler->sample(stream, batch);
      for (int i : batch) {
        eval_component(i, at_state, m, t, 0, 0, tmp.data());
        kern::axpy(1.0, tmp.data(), acc.data(), q);
      }
      kern::scal(1.0 / static_cast<double>(batch.size()), acc.data(), q);
    }
    return acc;
  }
};

void validate_config(const RunConfig& config, const GradientOracle& oracle,
                     const Preconditioner& precond) {
  if (config.k_out < 1 || config.k_in < 1 || config.b < 1) {
    throw ConfigError("run: k_out, k_in and b must be >= 1");
  }
  config.m.validate();
  if (config.gamma.kind == GammaSchedule::Kind::constant && !(config.gamma.value > 0.0)) {
    throw ConfigError("run: constant gamma must be > 0");
  }
  if (config.gamma.kind == GammaSchedule::Kind::star && !config.lipschitz.has_value()) {
    throw ConfigError("run: gamma = star requires Lipschitz data");
  }
  if (config.gamma_t0 < 0.0) throw ConfigError("run: gamma_t0 must be >= 0");
  if (config.refresh == RefreshMode::subsampled && config.b_prime < 1) {
    throw ConfigError("run: subsampled refresh requires b_prime >= 1");
  }
  if (!config.init.empty() && static_cast<int>(config.init.size()) != precond.dim()) {
    throw ConfigError("run: init dimension does not match the problem");
  }
  if (oracle.dim() != precond.dim()) {
    throw ConfigError("run: oracle and preconditioner dimensions differ");
  }
}

}  // namespace

Trajectory run_3p_spider(const RunConfig& config, const GradientOracle& oracle,
                         const Preconditioner& precond, const Regularizer& reg) {
  validate_config(config, oracle, precond);
  const auto start = Clock::now();
  const int q = oracle.dim();
  const int n = oracle.size();

  EngineState eng{config, oracle, precond, reg, resolve_use_mc(config, oracle), {}, {}};

  const double gamma =
      config.gamma.kind == GammaSchedule::Kind::constant
          ? config.gamma.value
          : gamma_star(precond.v_min(), precond.v_max(), config.lipschitz->grad_w,
                       config.lipschitz->aggregate, config.k_in, config.b);

  Trajectory traj;
  traj.algo = AlgoKind::spider;
  traj.k_out = config.k_out;
  traj.k_in = config.k_in;
  traj.gamma = gamma;
  traj.steps.reserve(static_cast<std::size_t>(config.k_out) * (config.k_in + 1));

  // Stop time is drawn before the run, from its own stream.
  {
    RngStream stop_rng = RngStream::derive(config.seed, {kStopStream});
    std::tie(traj.stop_t, traj.stop_k) = draw_stop_time(config.k_out, config.k_in, stop_rng);
  }

  if (config.init.empty()) {
    StateVector zero(q, 0.0);
    traj.init = weighted_prox(precond.eval(zero, eng.b_scratch), 1.0, reg, zero, config.prox);
  } else {
    traj.init = config.init;
  }

  MinibatchSampler sampler(n, config.b, config.sampling);
  std::optional<MinibatchSampler> refresh_sampler;
  if (config.refresh == RefreshMode::subsampled) {
    refresh_sampler.emplace(n, config.b_prime, config.sampling);
  }

  auto record = [&](int t, int k, double delta_hat, int m, const StateVector& state) {
    StepRecord rec;
    rec.t = t;
    rec.k = k;
    rec.delta_hat = delta_hat;
    rec.gamma = k == 0 ? config.gamma_t0 : gamma;
    rec.m = m;
    rec.wall_ms = ms_since(start);
    rec.counters = eng.counters;
    rec.state = state;
    traj.steps.push_back(std::move(rec));
  };

  StateVector s_prev = traj.init;  // S_hat_{t,k-1}
  StateVector s_curr = traj.init;  // S_hat_{t,k}
  StateVector cv;                  // S_{t,k}
  StateVector increment(q);
  StateVector tmp(q);
  std::vector<int> batch;

  for (int t = 1; t <= config.k_out; ++t) {
    if (t == 1) {
      // Line 2: S_{1,0} approximates h(S_hat_{1,-1}).
      cv = eng.refresh_control_variate(
          1, s_prev, refresh_sampler ? &*refresh_sampler : nullptr);
      record(1, 0, 0.0, config.m.at(1), s_curr);
    }
    if (config.record_control_variates) {
      CvEpoch epoch;
      epoch.start = cv;
      traj.cv_epochs.push_back(std::move(epoch));
    }

    const int m_inner = config.m.at(t);
    for (int k = 0; k < config.k_in; ++k) {
      // Line 5: one shared minibatch for the evaluations at both states.
      RngStream batch_rng = RngStream::derive(
          config.seed, {kBatchStream, static_cast<std::uint64_t>(t),
                        static_cast<std::uint64_t>(k + 1)});
      sampler.sample(batch_rng, batch);

      // Line 6: control-variate update. Both hhat_i^{t,k} and hhat_i^{t,k-1}
      // are freshly computed with budget m_{t,k+1} on disjoint streams.
      std::fill(increment.begin(), increment.end(), 0.0);
      for (int i : batch) {
        eng.eval_component(i, s_curr, m_inner, t, k + 1, 0, tmp.data());
        kern::axpy(1.0, tmp.data(), increment.data(), q);
        eng.eval_component(i, s_prev, m_inner, t, k + 1, 1, tmp.data());
        kern::axpy(-1.0, tmp.data(), increment.data(), q);
      }
      kern::scal(1.0 / config.b, increment.data(), q);
      kern::axpy(1.0, increment.data(), cv.data(), q);

      // Lines 7-8: half step and weighted prox at B(S_hat_{t,k}).
      StateVector half = add_scaled(s_curr, gamma, cv);
      StateVector next =
          weighted_prox(precond.eval(s_curr, eng.b_scratch), gamma, reg, half, config.prox);
      eng.counters.prox_calls += 1;
      if (!all_finite(next)) {
        std::ostringstream msg;
        msg << "run: non-finite iterate at (t=" << t << ", k=" << k + 1 << ")";
        throw NumericalError(msg.str());
      }
      const double delta_hat = nrm2sq_diff(next, s_curr) / (gamma * gamma);
      if (config.record_control_variates) {
        traj.cv_epochs.back().increments.push_back(increment);
        traj.cv_epochs.back().values.push_back(cv);
      }
      s_prev = s_curr;
      s_curr = std::move(next);
      record(t, k + 1, delta_hat, m_inner, s_curr);
    }

    // Lines 10-13: epoch transition producing S_hat_{t+1,0}. Under the
    // default gamma_t0 = 0 the refresh S_{t+1,0} does not enter the half
    // step, so it is skipped after the final epoch.
    const StateVector s_epoch_end = s_curr;  // S_hat_{t+1,-1}
    const bool need_cv = t < config.k_out || config.gamma_t0 > 0.0;
    if (need_cv) {
      cv = eng.refresh_control_variate(
          t + 1, s_epoch_end, refresh_sampler ? &*refresh_sampler : nullptr);
    }
    StateVector half = config.gamma_t0 > 0.0 ? add_scaled(s_epoch_end, config.gamma_t0, cv)
                                             : s_epoch_end;
    StateVector s0 = weighted_prox(precond.eval(s_epoch_end, eng.b_scratch),
                                   config.gamma_t0, reg, half, config.prox);
    eng.counters.prox_calls += 1;
    double delta0 = 0.0;
    if (config.gamma_t0 > 0.0) {
      delta0 = nrm2sq_diff(s0, s_epoch_end) / (config.gamma_t0 * config.gamma_t0);
    } else if (max_abs_diff(s0, s_epoch_end) != 0.0) {
      std::ostringstream msg;
      msg << "run: transition with gamma_t0 = 0 moved the iterate at t=" << t
          << " (infeasible epoch end?); 0/0 step ratio is undefined";
      throw NumericalError(msg.str());
    }
    s_prev = s_epoch_end;
    s_curr = std::move(s0);
    if (t < config.k_out) {
      record(t + 1, 0, delta0, config.m.at(t + 1), s_curr);
    } else {
      traj.final_state = s_curr;
    }
  }

  traj.counters = eng.counters;
  traj.delta_hat_at_stop = traj.at(traj.stop_t, traj.stop_k).delta_hat;
  traj.wall_ms = ms_since(start);
  return traj;
}

double control_variate_telescoping_check(const Trajectory& traj) {
  double worst = 0.0;
  for (const CvEpoch& epoch : traj.cv_epochs) {
    StateVector acc = epoch.start;
    for (std::size_t k = 0; k < epoch.increments.size(); ++k) {
      kern::axpy(1.0, epoch.increments[k].data(), acc.data(), acc.size());
      worst = std::max(worst, max_abs_diff(acc, epoch.values[k]));
    }
  }
  return worst;
}

double control_variate_refresh_check(const Trajectory& traj, const GradientOracle& oracle) {
  if (traj.cv_epochs.empty())
    throw ConfigError("control_variate_refresh_check: control variates were not recorded");
  double worst = 0.0;
  for (int t = 1; t <= static_cast<int>(traj.cv_epochs.size()); ++t) {
    const CvEpoch& epoch = traj.cv_epochs[t - 1];
    worst = std::max(worst,
                     max_abs_diff(epoch.start, mean_field(oracle, traj.state_before(t, 0))));
    for (std::size_t k = 0; k < epoch.values.size(); ++k) {
      worst = std::max(
          worst, max_abs_diff(epoch.values[k],
                              mean_field(oracle, traj.at(t, static_cast<int>(k)).state)));
    }
  }
  return worst;
}

ClosedFormCounts counters_closed_form(int k_out, int k_in, int b, std::int64_t n, int m) {
  ClosedFormCounts c;
  c.prox_calls = static_cast<std::int64_t>(k_out) * (k_in + 1);
  c.component_evals = static_cast<std::int64_t>(k_out) * (n + 2LL * b * k_in);
  c.mc_draws = static_cast<std::int64_t>(m) * c.component_evals;
  return c;
}

ComplexityPlan plan_complexity(std::int64_t n, double epsilon) {
  if (n < 1) throw ConfigError("plan_complexity: n must be >= 1");
  if (!(epsilon > 0.0) || epsilon > 1.0) {
    throw ConfigError("plan_complexity: epsilon must be in (0, 1]");
  }
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  ComplexityPlan plan;
  plan.b = static_cast<int>(iceil(sqrt_n));
  plan.k_in = plan.b;
  plan.k_out = static_cast<int>(iceil(1.0 / (sqrt_n * epsilon)));
  plan.m = static_cast<int>(iceil(1.0 / epsilon));
  plan.predicted = counters_closed_form(plan.k_out, plan.k_in, plan.b, n, plan.m);
  return plan;
}

Theorem1Bounds theorem1_rhs(const RunConfig& config, const Theorem1Constants& c) {
  if (config.refresh != RefreshMode::full) {
    throw ConfigError("theorem1_rhs: requires a full refresh (no subsampling error)");
  }
  if (config.gamma_t0 != 0.0) {
    throw ConfigError("theorem1_rhs: requires gamma_t0 = 0");
  }
  if (!(c.v_min > 0.0) || !(c.v_max >= c.v_min) || !(c.l_grad_w > 0.0) || !(c.l > 0.0) ||
      c.c_v < 0.0 || c.objective_gap < 0.0) {
    throw ConfigError("theorem1_rhs: invalid constants");
  }
  const double gstar =
      gamma_star(c.v_min, c.v_max, c.l_grad_w, c.l, config.k_in, config.b);
  if (config.gamma.kind == GammaSchedule::Kind::constant &&
      std::abs(config.gamma.value - gstar) > 1e-12 * gstar) {
    throw ConfigError("theorem1_rhs: run step size is not gamma_star");
  }

  const int k_in = config.k_in;
  const int k_out = config.k_out;
  const double ratio = std::sqrt(static_cast<double>(k_in) / config.b);
  const double sqrt_kin_b = std::sqrt(static_cast<double>(k_in) * config.b);

  // E[(k_in - K)/m_{tau, K+1}] and E[(k_in - K)/m_{tau, K}] over the uniform
  // stop-time grid. The schedule is keyed by t only, so the K and K+1 budgets
  // agree; both are kept for clarity of the formulas.
  double e_next = 0.0;
  double e_curr = 0.0;
  for (int t = 1; t <= k_out; ++t) {
    const double m_t = config.m.at(t);
    for (int k = 0; k <= k_in; ++k) {
      e_next += (k_in - k) / m_t;
      e_curr += (k_in - k) / m_t;
    }
  }
  const double cells = static_cast<double>(k_out) * (k_in + 1);
  e_next /= cells;
  e_curr /= cells;

  const double denom = c.l_grad_w + 2.0 * c.l * c.v_max * ratio;
  const double lhs1 = c.v_min * c.v_min / (2.0 * denom);
  const double rhs1 = c.objective_gap / (static_cast<double>(k_out) * (1 + k_in)) +
                      c.c_v * (c.v_max / (2.0 * c.l)) * e_next / sqrt_kin_b;

  Theorem1Bounds out;
  out.gamma_star = gstar;
  out.mean_remaining_over_m_next = e_next;
  out.mean_remaining_over_m_curr = e_curr;
  out.bound_step_sq = rhs1 / lhs1;

  const double lhs2_inv = (2.0 / c.v_min) * denom + c.l * ratio;
  const double vratio = c.v_max / c.v_min;
  const double brace = 1.0 / (c.l_grad_w / (c.l * c.v_min) + 2.0 * vratio * ratio);
  const double paren = 1.0 / c.l + vratio * vratio * gstar * ratio;
  const double rhs2 = brace * paren * out.bound_step_sq +
                      vratio * vratio * (c.c_v / c.l) * e_curr / sqrt_kin_b;
  out.bound_delta = rhs2 * lhs2_inv;
  return out;
}

double exact_delta(const Trajectory& traj, int t, int k, const GradientOracle& oracle,
                   const Preconditioner& precond, const Regularizer& reg) {
  if (!oracle.has_exact()) throw ConfigError("exact_delta: oracle has no exact capability");
  const StepRecord& rec = traj.at(t, k);
  const double gamma = k >= 1 ? rec.gamma : traj.gamma;
  return prox_fixed_point_residual(
      traj.state_before(t, k), rec.state, gamma,
      [&](const StateVector& s) { return mean_field(oracle, s); }, precond, reg);
}

}  // namespace spider3p
