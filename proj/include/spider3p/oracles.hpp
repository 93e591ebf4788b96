#pragma once

#include <span>
#include <vector>

#include "spider3p/linalg.hpp"
#include "spider3p/rng.hpp"

namespace spider3p {

// Per-component evaluator of the preconditioned gradient field
// h(s) = -B(s)^{-1} grad W(s) = (1/n) sum_i h_i(s). Components may be exact
// (closed form / quadrature) and/or Monte Carlo: hhat_i = (1/m) sum_r H_i(Z_r)
// with Z_r i.i.d. from pi_{i,s}.
//
// Evaluations are pure given the RNG stream, so per-component calls may run
// concurrently when each call owns a disjoint stream.
class GradientOracle {
 public:
  virtual ~GradientOracle() = default;

  virtual int size() const = 0;  // n, number of components
  virtual int dim() const = 0;   // q, dimension of the state

  virtual bool has_exact() const { return false; }
  virtual bool has_mc() const { return false; }
  // Per-component second moment integral ||H_i(z) - h_i(s)||^2 pi_{i,s}(dz).
  virtual bool has_second_moment() const { return false; }

  virtual void eval_exact(int i, const StateVector& s, double* out) const;
  virtual void eval_mc(int i, const StateVector& s, int m, RngStream& rng,
                       double* out) const;
  virtual double second_moment(int i, const StateVector& s) const;

  StateVector exact(int i, const StateVector& s) const;
  StateVector mc(int i, const StateVector& s, int m, RngStream& rng) const;
};

// h(s): arithmetic mean of the exact components in fixed index order.
StateVector mean_field(const GradientOracle& oracle, const StateVector& s);

// Per-component Lipschitz data and the aggregates entering the step size rule.
struct LipschitzData {
  enum class Aggregation { max, rms };

  Vec per_index;            // optional; empty when only aggregates are known
  double aggregate = 0.0;   // L
  double grad_w = 0.0;      // Lipschitz constant of grad W
  Aggregation rule = Aggregation::max;

  static LipschitzData from_per_index(Vec per_index, double grad_w,
                                      Aggregation rule = Aggregation::max);
  static LipschitzData from_aggregates(double aggregate, double grad_w);
};

enum class SamplingMode { with_replacement, without_replacement };

// Uniform minibatches of size b from {0, ..., n-1}; both sampling modes keep
// the unbiasedness identity h(s) = (1/b) E[sum_{i in B} h_i(s)].
class MinibatchSampler {
 public:
  MinibatchSampler(int n, int b, SamplingMode mode);

  int population() const { return n_; }
  int batch_size() const { return b_; }
  SamplingMode mode() const { return mode_; }

  void sample(RngStream& rng, std::vector<int>& out);
  std::vector<int> sample(RngStream& rng);

 private:
  int n_ = 0;
  int b_ = 0;
  SamplingMode mode_ = SamplingMode::with_replacement;
  std::vector<int> perm_;  // scratch for without-replacement draws
};

// Diagnostic: the perturbation
//   (1/b) sum_{i in batch} ( hhat_i(s_curr) - hhat_i(s_prev)
//                            - h_i(s_curr) + h_i(s_prev) )
// with fresh, independent draws (budget m each) for the two states. Requires
// both capabilities.
StateVector eta_error(const GradientOracle& oracle, std::span<const int> batch,
                      const StateVector& s_curr, const StateVector& s_prev, int m,
                      RngStream& rng);

// Visited-state surrogate of C_v = 2 sup_s (1/n) sum_i Var_{pi_{i,s}}(H_i):
// the max over the supplied states only, hence a lower bound on the sup.
double estimate_cv(const GradientOracle& oracle, std::span<const StateVector> states);

}  // namespace spider3p
