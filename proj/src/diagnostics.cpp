#include "spider3p/diagnostics.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "spider3p/errors.hpp"

namespace spider3p::harness {

namespace {

struct MeanVar {
  double mean = 0.0;
  double sd = 0.0;
};

MeanVar mean_sd(const std::vector<double>& xs) {
  MeanVar mv;
  for (double x : xs) mv.mean += x;
  mv.mean /= xs.size();
  double acc = 0.0;
  for (double x : xs) acc += (x - mv.mean) * (x - mv.mean);
  mv.sd = xs.size() > 1 ? std::sqrt(acc / (xs.size() - 1)) : 0.0;
  return mv;
}

double regression_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const MeanVar mx = mean_sd(x);
  const MeanVar my = mean_sd(y);
  double cov = 0.0;
  double var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (x[i] - mx.mean) * (y[i] - my.mean);
    var += (x[i] - mx.mean) * (x[i] - mx.mean);
  }
  return cov / var;
}

// Random point with s' Omega s = frac^2 * r.
StateVector random_feasible(const Regularizer& reg, int dim, double frac, RngStream& rng) {
  StateVector v(dim);
  for (double& x : v) x = rng.next_normal();
  if (!reg.is_ellipsoid()) return v;
  const double q = quad_form(reg.omega(), v);
  kern::scal(frac * std::sqrt(reg.radius() / q), v.data(), v.size());
  return v;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace

StateVector reference_ellipsoid_prox_pgd(const Matrix& b, const Matrix& omega, double r,
                                         const StateVector& s, int iterations) {
  const int q = b.rows();
  auto omega_chol = CholeskyFactor::compute(omega);
  if (!omega_chol) throw NumericalError("reference prox: Omega not positive definite");

  auto project = [&](StateVector& z) {
    const double qz = quad_form(omega, z);
    if (qz > r) kern::scal(std::sqrt(r / qz), z.data(), z.size());
  };

  // Step size 0.9 / lambda_max(Omega^{-1} B) by power iteration.
  StateVector v(q, 0.0);
  RngStream rng(17);
  for (double& x : v) x = rng.next_normal();
  double lam = 1.0;
  for (int it = 0; it < 50; ++it) {
    StateVector w = matvec(b, v);
    omega_chol->solve_in_place(w.data());
    const double norm = std::sqrt(kern::nrm2sq(w.data(), w.size()));
    if (!(norm > 0.0)) break;
    kern::scal(1.0 / norm, w.data(), w.size());
    StateVector bw = matvec(b, w);
    omega_chol->solve_in_place(bw.data());
    lam = std::abs(kern::dot(w.data(), bw.data(), w.size()));
    v = std::move(w);
  }
  const double step = 0.9 / std::max(lam, 1e-12);

  StateVector z = s;
  project(z);
  StateVector grad(q);
  for (int it = 0; it < iterations; ++it) {
    StateVector diff = sub(z, s);
    matvec(b, diff.data(), grad.data());
    omega_chol->solve_in_place(grad.data());
    kern::axpy(-step, grad.data(), z.data(), q);
    project(z);
  }
  return z;
}

bool DiagnosticsReport::all_passed() const {
  for (const DiagnosticCheck& c : checks) {
    if (c.status == DiagnosticCheck::Status::fail) return false;
  }
  return true;
}

namespace {

using Status = DiagnosticCheck::Status;

DiagnosticCheck check_eta_unbiasedness(const ProblemInstance& problem,
                                       const DiagnosticsOptions& opts) {
  DiagnosticCheck check{"eta_unbiasedness", Status::pass, ""};
  const GradientOracle& oracle = *problem.oracle;
  if (!oracle.has_exact() || !oracle.has_mc()) {
    check.status = Status::skipped;
    check.details = "needs both exact and MC capability";
    return check;
  }
  const int q = oracle.dim();
  RngStream setup = RngStream::derive(opts.seed, {1});
  const StateVector s_curr = random_feasible(problem.reg, q, 0.6, setup);
  const StateVector s_prev = random_feasible(problem.reg, q, 0.4, setup);
  MinibatchSampler sampler(oracle.size(), opts.eta_b, SamplingMode::with_replacement);

  Vec sum(q, 0.0);
  Vec sum_sq(q, 0.0);
  std::vector<int> batch;
  for (int rep = 0; rep < opts.eta_reps; ++rep) {
    RngStream rng = RngStream::derive(opts.seed, {2, static_cast<std::uint64_t>(rep)});
    sampler.sample(rng, batch);
    const StateVector eta = eta_error(oracle, batch, s_curr, s_prev, opts.eta_m, rng);
    for (int j = 0; j < q; ++j) {
      sum[j] += eta[j];
      sum_sq[j] += eta[j] * eta[j];
    }
  }
  double worst = 0.0;
  for (int j = 0; j < q; ++j) {
    const double mean = sum[j] / opts.eta_reps;
    const double var =
        std::max(0.0, (sum_sq[j] - opts.eta_reps * mean * mean) / (opts.eta_reps - 1));
    const double se = std::sqrt(var / opts.eta_reps);
    const double ratio = se > 0.0 ? std::abs(mean) / se : (mean == 0.0 ? 0.0 : 1e9);
    worst = std::max(worst, ratio);
  }
  check.status = worst <= 4.0 ? Status::pass : Status::fail;
  check.details = "max |mean|/SE = " + fmt(worst) + " over " +
                  std::to_string(opts.eta_reps) + " replications (limit 4)";
  return check;
}

DiagnosticCheck check_variance_law(const ProblemInstance& problem,
                                   const DiagnosticsOptions& opts) {
  DiagnosticCheck check{"eta_variance_law", Status::pass, ""};
  const GradientOracle& oracle = *problem.oracle;
  if (!oracle.has_exact() || !oracle.has_mc() || !oracle.has_second_moment()) {
    check.status = Status::skipped;
    check.details = "needs exact, MC and second-moment capability";
    return check;
  }
  const int q = oracle.dim();
  RngStream setup = RngStream::derive(opts.seed, {3});
  const StateVector s_curr = random_feasible(problem.reg, q, 0.5, setup);
  const StateVector s_prev = random_feasible(problem.reg, q, 0.35, setup);

  // The surrogate sup must dominate the variance at the two eta states; the
  // per-component variance grows towards the constraint boundary (saturated
  // logistic tilt), so near-boundary states are included.
  std::vector<StateVector> cv_states{StateVector(q, 0.0), s_curr, s_prev};
  for (int i = 0; i < 6; ++i) {
    cv_states.push_back(random_feasible(problem.reg, q, 0.97, setup));
  }
  for (int i = 0; i < 4; ++i) {
    cv_states.push_back(random_feasible(problem.reg, q, 0.5 + 0.1 * i, setup));
  }
  const double cv = estimate_cv(oracle, cv_states);

  const double margin = 1.0 + 3.0 / std::sqrt(static_cast<double>(opts.var_reps));
  double worst_excess = 0.0;
  double worst_slope_err = 0.0;
  std::vector<int> batch;
  for (int b : opts.var_b) {
    MinibatchSampler sampler(oracle.size(), b, SamplingMode::with_replacement);
    std::vector<double> log_m;
    std::vector<double> log_e;
    for (int m : opts.var_m) {
      double acc = 0.0;
      for (int rep = 0; rep < opts.var_reps; ++rep) {
        RngStream rng = RngStream::derive(
            opts.seed, {4, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(m),
                        static_cast<std::uint64_t>(rep)});
        sampler.sample(rng, batch);
        const StateVector eta = eta_error(oracle, batch, s_curr, s_prev, m, rng);
        acc += kern::nrm2sq(eta.data(), eta.size());
      }
      const double mean = acc / opts.var_reps;
      const double bound = cv / (static_cast<double>(b) * m) * margin;
      worst_excess = std::max(worst_excess, mean / bound);
      log_m.push_back(std::log(static_cast<double>(m)));
      log_e.push_back(std::log(mean));
    }
    const double slope = regression_slope(log_m, log_e);
    worst_slope_err = std::max(worst_slope_err, std::abs(slope + 1.0));
  }
  const bool ok = worst_excess <= 1.0 && worst_slope_err <= opts.slope_tol;
  check.status = ok ? Status::pass : Status::fail;
  check.details = "max E||eta||^2 / bound = " + fmt(worst_excess) +
                  " (limit 1), max |slope+1| = " + fmt(worst_slope_err) + " (limit " +
                  fmt(opts.slope_tol) + ")";
  return check;
}

DiagnosticCheck check_gradient_identity(const ProblemInstance& problem,
                                        const DiagnosticsOptions& opts) {
  DiagnosticCheck check{"gradient_fd_identity", Status::pass, ""};
  if (!problem.oracle->has_exact()) {
    check.status = Status::skipped;
    check.details = "needs the exact (quadrature) oracle";
    return check;
  }
  const int q = problem.oracle->dim();
  RngStream rng = RngStream::derive(opts.seed, {5});
  double worst = 0.0;
  for (int p = 0; p < opts.fd_points; ++p) {
    const StateVector s = random_feasible(problem.reg, q, 0.2 + 0.6 * rng.next_unit(), rng);
    const StateVector h = mean_field(*problem.oracle, s);
    StateVector target = matvec(problem.omega->omega(), h);
    kern::scal(-1.0, target.data(), target.size());  // grad W(s) = -Omega h(s)

    StateVector fd(q);
    StateVector sp = s;
    auto w_at = [&](const StateVector& x) {
      return latent::objective_w(x, *problem.dataset, problem.params, *problem.omega,
                                 problem.quad_nodes);
    };
    for (int j = 0; j < q; ++j) {
      auto central = [&](double step) {
        sp[j] = s[j] + step;
        const double up = w_at(sp);
        sp[j] = s[j] - step;
        const double down = w_at(sp);
        sp[j] = s[j];
        return (up - down) / (2.0 * step);
      };
      const double d1 = central(opts.fd_step);
      const double d2 = central(0.5 * opts.fd_step);
      fd[j] = (4.0 * d2 - d1) / 3.0;  // Richardson extrapolation
    }
    const double rel = std::sqrt(nrm2sq_diff(fd, target) /
                                 std::max(kern::nrm2sq(target.data(), q), 1e-30));
    worst = std::max(worst, rel);
  }
  check.status = worst <= opts.fd_rel_tol ? Status::pass : Status::fail;
  check.details = "max relative error = " + fmt(worst) + " over " +
                  std::to_string(opts.fd_points) + " feasible points (limit " +
                  fmt(opts.fd_rel_tol) + ")";
  return check;
}

DiagnosticCheck check_prox_equivalence(const DiagnosticsOptions& opts) {
  DiagnosticCheck check{"prox_bruteforce_equivalence", Status::pass, ""};
  RngStream rng = RngStream::derive(opts.seed, {6});
  double worst_comp = 0.0;
  double worst_kkt = 0.0;
  for (int inst = 0; inst < opts.prox_instances; ++inst) {
    const int q = inst % 2 == 0 ? 2 : 5;
    auto random_spd = [&](double ridge) {
      Matrix g(q, q);
      for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) g(i, j) = rng.next_normal();
      Matrix a = matmul(transpose(g), g);
      for (int i = 0; i < q; ++i) a(i, i) += ridge;
      return a;
    };
    const Matrix b = random_spd(0.3 * q);
    const Matrix omega = random_spd(0.2 * q);
    const double r = 0.5 + rng.next_unit();
    StateVector s(q);
    for (double& x : s) x = 2.0 * rng.next_normal();
    if (inst % 3 == 0) {
      // Interior point: prox must return it unchanged.
      const double qs = quad_form(omega, s);
      kern::scal(0.8 * std::sqrt(r / qs), s.data(), s.size());
    }

    const Regularizer reg = Regularizer::ellipsoid(omega, r);
    const StateVector got = weighted_prox(b, 1.0, reg, s);
    const StateVector ref = reference_ellipsoid_prox_pgd(b, omega, r, s);
    worst_comp = std::max(worst_comp, max_abs_diff(got, ref));

    const double qs = quad_form(omega, s);
    if (qs > r) {
      StateVector u = matvec(b, sub(s, got));
      StateVector v = matvec(omega, got);
      const double lam = kern::dot(u.data(), v.data(), u.size()) /
                         std::max(kern::nrm2sq(v.data(), v.size()), 1e-30);
      double resid = 0.0;
      for (int j = 0; j < q; ++j) resid = std::max(resid, std::abs(u[j] - lam * v[j]));
      if (lam < -1e-9) resid = std::max(resid, std::abs(lam));
      if (std::abs(quad_form(omega, got) - r) > 1e-9 * r) {
        resid = std::max(resid, 1.0);  // output must land on the boundary
      }
      worst_kkt = std::max(worst_kkt, resid);
    }
  }
  const bool ok = worst_comp <= opts.prox_component_tol && worst_kkt <= opts.prox_kkt_tol;
  check.status = ok ? Status::pass : Status::fail;
  check.details = "max componentwise gap = " + fmt(worst_comp) + " (limit " +
                  fmt(opts.prox_component_tol) + "), max KKT residual = " + fmt(worst_kkt) +
                  " (limit " + fmt(opts.prox_kkt_tol) + ")";
  return check;
}

RunConfig diagnostics_run_config(const ProblemInstance& problem,
                                 const DiagnosticsOptions& opts, bool star,
                                 std::uint64_t seed) {
  RunConfig rc;
  rc.k_out = opts.run_k_out;
  rc.k_in = opts.run_k_in;
  rc.b = opts.run_b;
  rc.m = MSchedule::constant(opts.run_m);
  rc.gamma = star ? GammaSchedule::star() : GammaSchedule::constant(0.1);
  rc.lipschitz = LipschitzData::from_aggregates(problem.lipschitz.aggregate,
                                                problem.lipschitz.grad_w);
  rc.oracle_mode = problem.oracle->has_mc() ? OracleMode::monte_carlo : OracleMode::exact;
  rc.seed = seed;
  return rc;
}

DiagnosticCheck check_telescoping(const ProblemInstance& problem,
                                  const DiagnosticsOptions& opts) {
  DiagnosticCheck check{"control_variate_telescoping", Status::pass, ""};
  const RunConfig rc = diagnostics_run_config(problem, opts, false, opts.seed + 11);
  const Trajectory traj = run_3p_spider(rc, *problem.oracle, problem.precond, problem.reg);
  const double resid = control_variate_telescoping_check(traj);
  check.status = resid <= 1e-10 ? Status::pass : Status::fail;
  check.details = "max telescoping residual = " + fmt(resid) + " (limit 1e-10)";
  return check;
}

DiagnosticCheck check_counters(const ProblemInstance& problem,
                               const DiagnosticsOptions& opts) {
  DiagnosticCheck check{"counter_identities", Status::pass, ""};
  const RunConfig rc = diagnostics_run_config(problem, opts, false, opts.seed + 12);
  const Trajectory traj = run_3p_spider(rc, *problem.oracle, problem.precond, problem.reg);
  const ClosedFormCounts cf = counters_closed_form(rc.k_out, rc.k_in, rc.b,
                                                   problem.oracle->size(), opts.run_m);
  const bool mc = problem.oracle->has_mc();
  bool ok = traj.counters.prox_calls == cf.prox_calls &&
            traj.counters.component_evals == cf.component_evals &&
            (!mc || traj.counters.mc_draws == cf.mc_draws);
  const ComplexityPlan plan = plan_complexity(100, 0.1);
  ok = ok && plan.b == 10 && plan.k_in == 10 && plan.k_out == 1 && plan.m == 10 &&
       plan.predicted.prox_calls == 11 && plan.predicted.component_evals == 300 &&
       plan.predicted.mc_draws == 3000;
  check.status = ok ? Status::pass : Status::fail;
  std::ostringstream details;
  details << "live (N_P, N_A, N_MC) = (" << traj.counters.prox_calls << ", "
          << traj.counters.component_evals << ", " << traj.counters.mc_draws
          << "), closed form (" << cf.prox_calls << ", " << cf.component_evals << ", "
          << cf.mc_draws << ")";
  check.details = details.str();
  return check;
}

DiagnosticCheck check_theorem_bound(const ProblemInstance& problem,
                                    const DiagnosticsOptions& opts) {
  DiagnosticCheck check{"theorem_bound", Status::pass, ""};
  const GradientOracle& oracle = *problem.oracle;
  if (!oracle.has_exact() || !oracle.has_mc() || !oracle.has_second_moment()) {
    check.status = Status::skipped;
    check.details = "needs exact, MC and second-moment capability";
    return check;
  }
  const int q = oracle.dim();
  RunConfig rc = diagnostics_run_config(problem, opts, true, 0);

  Theorem1Constants constants;
  constants.v_min = problem.precond.v_min();
  constants.v_max = problem.precond.v_max();
  constants.l = rc.lipschitz->aggregate;
  constants.l_grad_w = rc.lipschitz->grad_w;

  RngStream setup = RngStream::derive(opts.seed, {7});
  std::vector<StateVector> cv_states{StateVector(q, 0.0)};
  for (int i = 0; i < 10; ++i) {
    cv_states.push_back(random_feasible(problem.reg, q, 0.1 + 0.09 * i, setup));
  }
  constants.c_v = estimate_cv(oracle, cv_states);

  // Surrogate for min(W+g): a long deterministic full-batch prox-gradient run.
  StateVector init(q, 0.0);
  const double gamma_det = 0.9 * problem.precond.v_min() / constants.l_grad_w;
  const Trajectory det = run_full_prox_gradient(opts.surrogate_iterations, gamma_det,
                                                oracle, problem.precond, problem.reg, init);
  auto w_at = [&](const StateVector& s) {
    return latent::objective_w(s, *problem.dataset, problem.params, *problem.omega,
                               problem.quad_nodes);
  };
  const double w_min = w_at(det.final_state);
  constants.objective_gap = std::max(0.0, w_at(init) - w_min);

  const Theorem1Bounds bounds = theorem1_rhs(rc, constants);

  std::vector<double> step_sq;
  std::vector<double> deltas;
  for (int r = 0; r < opts.theorem_runs; ++r) {
    rc.seed = opts.seed + 100 + r;
    const Trajectory traj = run_3p_spider(rc, oracle, problem.precond, problem.reg);
    step_sq.push_back(traj.delta_hat_at_stop);
    deltas.push_back(exact_delta(traj, traj.stop_t, traj.stop_k, oracle, problem.precond,
                                 problem.reg));
  }
  const MeanVar mv_step = mean_sd(step_sq);
  const MeanVar mv_delta = mean_sd(deltas);
  const double se_step = mv_step.sd / std::sqrt(static_cast<double>(step_sq.size()));
  const double se_delta = mv_delta.sd / std::sqrt(static_cast<double>(deltas.size()));
  const bool ok = mv_step.mean <= bounds.bound_step_sq + 2.0 * se_step &&
                  mv_delta.mean <= bounds.bound_delta + 2.0 * se_delta;
  check.status = ok ? Status::pass : Status::fail;
  check.details = "E[step^2/gamma^2] = " + fmt(mv_step.mean) + " (bound " +
                  fmt(bounds.bound_step_sq) + "), E[Delta] = " + fmt(mv_delta.mean) +
                  " (bound " + fmt(bounds.bound_delta) + "), " +
                  std::to_string(opts.theorem_runs) +
                  " runs; second bound uses the leading-brace-times-step-term grouping";
  return check;
}

}  // namespace

DiagnosticsReport run_diagnostics(const ProblemInstance& problem,
                                  const DiagnosticsOptions& opts) {
  DiagnosticsReport report;
  report.checks.push_back(check_eta_unbiasedness(problem, opts));
  report.checks.push_back(check_variance_law(problem, opts));
  report.checks.push_back(check_gradient_identity(problem, opts));
  report.checks.push_back(check_prox_equivalence(opts));
  report.checks.push_back(check_telescoping(problem, opts));
  report.checks.push_back(check_counters(problem, opts));
  report.checks.push_back(check_theorem_bound(problem, opts));
  return report;
}

void print_report(const DiagnosticsReport& report, std::ostream& out) {
  for (const DiagnosticCheck& check : report.checks) {
    const char* tag = check.status == DiagnosticCheck::Status::pass   ? "PASS"
                      : check.status == DiagnosticCheck::Status::fail ? "FAIL"
                                                                      : "SKIP";
    out << '[' << tag << "] " << check.name << ": " << check.details << '\n';
  }
  out << (report.all_passed() ? "all checks passed\n" : "some checks FAILED\n");
}

}  // namespace spider3p::harness
