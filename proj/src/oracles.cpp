#include "spider3p/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spider3p/errors.hpp"

namespace spider3p {

void GradientOracle::eval_exact(int, const StateVector&, double*) const {
  throw ConfigError("GradientOracle: exact evaluation not available");
}

void GradientOracle::eval_mc(int, const StateVector&, int, RngStream&, double*) const {
  throw ConfigError("GradientOracle: Monte Carlo evaluation not available");
}

double GradientOracle::second_moment(int, const StateVector&) const {
  throw ConfigError("GradientOracle: second-moment evaluation not available");
}

StateVector GradientOracle::exact(int i, const StateVector& s) const {
  StateVector out(dim());
  eval_exact(i, s, out.data());
  return out;
}

StateVector GradientOracle::mc(int i, const StateVector& s, int m, RngStream& rng) const {
  StateVector out(dim());
  eval_mc(i, s, m, rng, out.data());
  return out;
}

StateVector mean_field(const GradientOracle& oracle, const StateVector& s) {
  if (!oracle.has_exact())
    throw ConfigError("mean_field: oracle has no exact capability");
  const int n = oracle.size();
  StateVector acc(oracle.dim(), 0.0);
  StateVector tmp(oracle.dim());
  for (int i = 0; i < n; ++i) {
    oracle.eval_exact(i, s, tmp.data());
    kern::axpy(1.0, tmp.data(), acc.data(), acc.size());
  }
  kern::scal(1.0 / n, acc.data(), acc.size());
  return acc;
}

LipschitzData LipschitzData::from_per_index(Vec per_index, double grad_w,
                                            Aggregation rule) {
  if (per_index.empty()) throw ConfigError("LipschitzData: empty per-index list");
  for (double l : per_index)
    if (!(l > 0.0)) throw ConfigError("LipschitzData: constants must be positive");
  if (!(grad_w > 0.0)) throw ConfigError("LipschitzData: grad_w must be positive");
  LipschitzData data;
  data.rule = rule;
  if (rule == Aggregation::max) {
    data.aggregate = *std::max_element(per_index.begin(), per_index.end());
  } else {
    double acc = 0.0;
    for (double l : per_index) acc += l * l;
    data.aggregate = std::sqrt(acc / per_index.size());
  }
  data.per_index = std::move(per_index);
  data.grad_w = grad_w;
  return data;
}

LipschitzData LipschitzData::from_aggregates(double aggregate, double grad_w) {
  if (!(aggregate > 0.0) || !(grad_w > 0.0))
    throw ConfigError("LipschitzData: aggregates must be positive");
  LipschitzData data;
  data.aggregate = aggregate;
  data.grad_w = grad_w;
  return data;
}

MinibatchSampler::MinibatchSampler(int n, int b, SamplingMode mode)
    : n_(n), b_(b), mode_(mode) {
  if (n < 1 || b < 1) throw ConfigError("MinibatchSampler: need n >= 1 and b >= 1");
  if (mode == SamplingMode::without_replacement && b > n) {
    throw ConfigError("MinibatchSampler: b > n is invalid without replacement");
  }
  if (mode == SamplingMode::without_replacement) {
    perm_.resize(n);
    std::iota(perm_.begin(), perm_.end(), 0);
  }
}

void MinibatchSampler::sample(RngStream& rng, std::vector<int>& out) {
  out.resize(b_);
  if (mode_ == SamplingMode::with_replacement) {
    for (int k = 0; k < b_; ++k) {
      out[k] = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_)));
    }
    return;
  }
  // Partial Fisher-Yates over a persistent permutation; any starting
  // permutation yields uniform ordered b-subsets.
  for (int k = 0; k < b_; ++k) {
    const int j = k + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n_ - k)));
    std::swap(perm_[k], perm_[j]);
    out[k] = perm_[k];
  }
}

std::vector<int> MinibatchSampler::sample(RngStream& rng) {
  std::vector<int> out;
  sample(rng, out);
  return out;
}

StateVector eta_error(const GradientOracle& oracle, std::span<const int> batch,
                      const StateVector& s_curr, const StateVector& s_prev, int m,
                      RngStream& rng) {
  if (!oracle.has_exact() || !oracle.has_mc())
    throw ConfigError("eta_error: oracle needs both exact and Monte Carlo capability");
  const int q = oracle.dim();
  StateVector acc(q, 0.0);
  StateVector tmp(q);
  for (int i : batch) {
    oracle.eval_mc(i, s_curr, m, rng, tmp.data());
    kern::axpy(1.0, tmp.data(), acc.data(), q);
    oracle.eval_mc(i, s_prev, m, rng, tmp.data());
    kern::axpy(-1.0, tmp.data(), acc.data(), q);
    oracle.eval_exact(i, s_curr, tmp.data());
    kern::axpy(-1.0, tmp.data(), acc.data(), q);
    oracle.eval_exact(i, s_prev, tmp.data());
    kern::axpy(1.0, tmp.data(), acc.data(), q);
  }
  kern::scal(1.0 / static_cast<double>(batch.size()), acc.data(), q);
  return acc;
}

double estimate_cv(const GradientOracle& oracle, std::span<const StateVector> states) {
  if (!oracle.has_second_moment())
    throw ConfigError("estimate_cv: oracle has no second-moment capability");
  if (states.empty()) throw ConfigError("estimate_cv: need at least one state");
  const int n = oracle.size();
  double best = 0.0;
  for (const StateVector& s : states) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += oracle.second_moment(i, s);
    best = std::max(best, 2.0 * acc / n);
  }
  return best;
}

}  // namespace spider3p
