#pragma once

#include <string>
#include <vector>

#include "spider3p/experiment.hpp"

namespace spider3p::harness {

// Reference minimizer of (1/2)(s'-s)' B (s'-s) over {s' : s'^T Omega s' <= r}:
// projected gradient in the Omega geometry with the exact radial projection.
// Independent of the KKT path inside weighted_prox; used as its oracle.
StateVector reference_ellipsoid_prox_pgd(const Matrix& b, const Matrix& omega, double r,
                                         const StateVector& s, int iterations = 100000);

struct DiagnosticsOptions {
  std::uint64_t seed = 20240501;
  // eta unbiasedness
  int eta_reps = 10000;
  int eta_b = 4;
  int eta_m = 8;
  // variance law grid
  std::vector<int> var_b{1, 4, 16};
  std::vector<int> var_m{4, 16, 64};
  int var_reps = 10000;
  double slope_tol = 0.1;
  // gradient identity
  int fd_points = 20;
  double fd_step = 1e-5;
  double fd_rel_tol = 1e-4;
  // prox equivalence
  int prox_instances = 100;
  double prox_component_tol = 1e-6;
  double prox_kkt_tol = 1e-7;
  // telescoping / counters / theorem check run shape
  int run_k_out = 4;
  int run_k_in = 8;
  int run_b = 8;
  int run_m = 8;
  int theorem_runs = 50;
  int surrogate_iterations = 2000;
};

struct DiagnosticCheck {
  enum class Status { pass, fail, skipped };
  std::string name;
  Status status = Status::pass;
  std::string details;
};

struct DiagnosticsReport {
  std::vector<DiagnosticCheck> checks;
  bool all_passed() const;
};

// The seven checks: eta unbiasedness, eta variance law, gradient
// finite-difference identity, prox brute-force equivalence, control-variate
// telescoping audit, counter identities, empirical theorem bound. Checks that
// need a missing oracle capability are reported as skipped.
DiagnosticsReport run_diagnostics(const ProblemInstance& problem,
                                  const DiagnosticsOptions& opts);

void print_report(const DiagnosticsReport& report, std::ostream& out);

}  // namespace spider3p::harness
