#pragma once

#include "spider3p/spider.hpp"

namespace spider3p {

// Prox-Online-EM: stochastic preconditioned proximal gradient without
// variance reduction,
//   S_{t+1} = Prox_{B(S_t), gamma_{t+1} g}( S_t + gamma_{t+1} (1/b) sum_{i in B_{t+1}} hhat_i(S_t) ),
// fresh batch and fresh Monte Carlo draws every step.
struct OnlineConfig {
  enum class StepKind { constant, one_over_t };

  int iterations = 1;
  int b = 1;
  StepKind step = StepKind::constant;
  double gamma = 0.1;  // constant value, or gamma/t under one_over_t
  int m = 1;
  SamplingMode sampling = SamplingMode::with_replacement;
  OracleMode oracle_mode = OracleMode::automatic;
  std::uint64_t seed = 0;
  StateVector init;
  ProxOptions prox;
};

// Step records use t = iteration, k = 0; counters advance by
// (N_P, N_A, N_MC) += (1, b, b*m) per step.
Trajectory run_prox_online_em(const OnlineConfig& config, const GradientOracle& oracle,
                              const Preconditioner& precond, const Regularizer& reg);

// Deterministic full-batch reference S_{t+1} = Prox_{B(S_t), gamma g}(S_t + gamma h(S_t)),
// used as the min(W+g) surrogate driver and as the degenerate-case oracle.
Trajectory run_full_prox_gradient(int iterations, double gamma,
                                  const GradientOracle& oracle,
                                  const Preconditioner& precond, const Regularizer& reg,
                                  const StateVector& init, const ProxOptions& opts = {});

}  // namespace spider3p
