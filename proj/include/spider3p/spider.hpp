#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "spider3p/oracles.hpp"
#include "spider3p/precond_prox.hpp"

namespace spider3p {

// RNG stream derivation contract (documented so that independent
// reimplementations can reproduce a run bit-for-bit):
//   stop time            derive(seed, {kStopStream})
//   minibatch at (t,k)   derive(seed, {kBatchStream, t, k})   k=0 is the refresh batch
//   MC draws for component i at inner step k of epoch t,
//     evaluated at the current state  derive(seed, {kMcStream, t, k, i, 0})
//     evaluated at the previous state derive(seed, {kMcStream, t, k, i, 1})
//   refresh draws for component i     derive(seed, {kMcStream, t, 0, i, 0})
inline constexpr std::uint64_t kBatchStream = 1;
inline constexpr std::uint64_t kMcStream = 2;
inline constexpr std::uint64_t kStopStream = 3;

struct GammaSchedule {
  enum class Kind { constant, star };
  Kind kind = Kind::constant;
  double value = 0.1;  // used by the constant kind

  static GammaSchedule constant(double gamma) { return {Kind::constant, gamma}; }
  static GammaSchedule star() { return {Kind::star, 0.0}; }
};

// Monte Carlo budget m_{t,k}, piecewise-constant in the outer index t.
struct MSchedule {
  struct Segment {
    int from_t = 1;
    int m = 1;
  };
  std::vector<Segment> segments{{1, 1}};

  static MSchedule constant(int m) { return {{{1, m}}}; }
  int at(int t) const;
  bool is_constant() const { return segments.size() == 1; }
  void validate() const;
};

enum class RefreshMode { full, subsampled };
enum class OracleMode { automatic, monte_carlo, exact };

struct RunConfig {
  int k_out = 1;
  int k_in = 1;
  int b = 1;
  GammaSchedule gamma;
  double gamma_t0 = 0.0;  // step size of the epoch-transition prox
  MSchedule m = MSchedule::constant(1);
  RefreshMode refresh = RefreshMode::full;
  int b_prime = 0;  // subsampled refresh batch size
  SamplingMode sampling = SamplingMode::with_replacement;
  OracleMode oracle_mode = OracleMode::automatic;
  std::uint64_t seed = 0;
  StateVector init;  // empty: B-weighted projection of 0 onto dom g
  std::optional<LipschitzData> lipschitz;  // required for GammaSchedule::star
  bool record_control_variates = true;
  ProxOptions prox;
};

struct Counters {
  std::int64_t prox_calls = 0;
  std::int64_t component_evals = 0;
  std::int64_t mc_draws = 0;
};

struct StepRecord {
  int t = 0;
  int k = 0;
  double delta_hat = 0.0;  // ||S_{t,k} - S_{t,k-1}||^2 / gamma_{t,k}^2
  double gamma = 0.0;
  int m = 0;
  double wall_ms = 0.0;
  Counters counters;  // cumulative, at record time
  StateVector state;
};

// Per-epoch control-variate audit data: the refreshed value and the exact
// increments applied at each inner step.
struct CvEpoch {
  StateVector start;                   // S_{t,0}
  std::vector<StateVector> increments; // (1/b) sum_{i in B} (hhat^k_i - hhat^{k-1}_i)
  std::vector<StateVector> values;     // S_{t,k}, k = 1..k_in
};

enum class AlgoKind { spider, online_em, full_gradient };

struct Trajectory {
  AlgoKind algo = AlgoKind::spider;
  int k_out = 0;
  int k_in = 0;
  double gamma = 0.0;  // resolved inner step size
  StateVector init;
  StateVector final_state;
  std::vector<StepRecord> steps;  // spider: (t,k) grid, t=1..k_out, k=0..k_in
  int stop_t = 1;
  int stop_k = 0;
  double delta_hat_at_stop = 0.0;
  Counters counters;
  std::vector<CvEpoch> cv_epochs;
  double wall_ms = 0.0;

  const StepRecord& at(int t, int k) const;        // spider grid access
  const StateVector& state_before(int t, int k) const;  // S_{t,k-1}; k=0 -> S_{t,-1}
};

// Theorem step size: v_min / (L_gradW + 2 L v_max sqrt(k_in) / sqrt(b)).
double gamma_star(double v_min, double v_max, double l_grad_w, double l, int k_in, int b);

// Pre-drawn uniform stop time (tau, K) on {1..k_out} x {0..k_in}.
std::pair<int, int> draw_stop_time(int k_out, int k_in, RngStream& rng);

Trajectory run_3p_spider(const RunConfig& config, const GradientOracle& oracle,
                         const Preconditioner& precond, const Regularizer& reg);

// Max infinity-norm discrepancy between recorded S_{t,k} values and the
// telescoped sum of recorded increments. An arithmetic identity; anything
// above rounding noise indicates a bookkeeping bug.
double control_variate_telescoping_check(const Trajectory& traj);

// Exact-oracle audit: max over (t,k) of ||S_{t,k} - h(S_hat_{t,k-1})||_inf.
double control_variate_refresh_check(const Trajectory& traj, const GradientOracle& oracle);

struct ClosedFormCounts {
  std::int64_t prox_calls = 0;
  std::int64_t component_evals = 0;
  std::int64_t mc_draws = 0;
};

// Full refresh, constant m:
//   N_P = k_out (k_in + 1), N_A = k_out (n + 2 b k_in), N_MC = m N_A.
ClosedFormCounts counters_closed_form(int k_out, int k_in, int b, std::int64_t n, int m);

struct ComplexityPlan {
  int b = 0;
  int k_in = 0;
  int k_out = 0;
  int m = 0;
  ClosedFormCounts predicted;
};

// Near-optimal parameter plan b = k_in = ceil(sqrt(n)),
// k_out = ceil(1/(sqrt(n) eps)), m = ceil(1/eps).
ComplexityPlan plan_complexity(std::int64_t n, double epsilon);

struct Theorem1Constants {
  double v_min = 0.0;
  double v_max = 0.0;
  double l_grad_w = 0.0;
  double l = 0.0;
  double c_v = 0.0;
  double objective_gap = 0.0;  // W(init) + g(init) - min(W + g)
};

struct Theorem1Bounds {
  double bound_step_sq = 0.0;  // on E[ ||S_{tau,K} - S_{tau,K-1}||^2 / gamma*^2 ]
  double bound_delta = 0.0;    // on E[ Delta_{tau,K} ]
  double gamma_star = 0.0;
  double mean_remaining_over_m_next = 0.0;  // E[(k_in - K)/m_{tau,K+1}]
  double mean_remaining_over_m_curr = 0.0;  // E[(k_in - K)/m_{tau,K}]
};

// Evaluates the right-hand sides of both theorem inequalities, divided by the
// respective left-hand-side multipliers. Refuses configurations outside the
// theorem hypotheses (full refresh, gamma_t0 = 0, gamma = gamma_star).
//
// The displayed second inequality leaves the grouping of its continued
// product ambiguous; this evaluator multiplies the leading brace factor into
// the step-expectation term only.
Theorem1Bounds theorem1_rhs(const RunConfig& config, const Theorem1Constants& constants);

// Quadrature-exact Delta_{t,k}: the prox fixed-point residual at the recorded
// pair (state_before, state) with B evaluated at the (t,k) iterate. At k = 0
// the recorded gamma is zero; the epoch's inner step size is used instead
// (the fixed-point set does not depend on gamma).
double exact_delta(const Trajectory& traj, int t, int k, const GradientOracle& oracle,
                   const Preconditioner& precond, const Regularizer& reg);

}  // namespace spider3p
