#include "spider3p/rng.hpp"

#include <cmath>

#include "spider3p/errors.hpp"

namespace spider3p {

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

inline std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

void RngStream::seed_from(std::uint64_t x) {
  // Expand one 64-bit key into the full xoshiro state; splitmix64 never
  // yields the all-zero state for all four words.
  state_[0] = splitmix64(x);
  state_[1] = splitmix64(x);
  state_[2] = splitmix64(x);
  state_[3] = splitmix64(x);
  has_cached_normal_ = false;
}

RngStream::RngStream(std::uint64_t seed) { seed_from(seed); }

RngStream RngStream::derive(std::uint64_t root_seed,
                            std::initializer_list<std::uint64_t> path) {
  std::uint64_t acc = root_seed;
  std::uint64_t mixed = splitmix64(acc);
  for (std::uint64_t w : path) {
    acc ^= w + 0x9e3779b97f4a7c15ULL + (mixed << 6) + (mixed >> 2);
    mixed = splitmix64(acc);
  }
  RngStream s(0);
  s.seed_from(mixed);
  return s;
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
  if (bound == 0) throw NumericalError("RngStream::next_below: bound must be >= 1");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % bound;
  }
}

double RngStream::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_unit_pos() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RngStream::next_normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  const double u1 = next_unit_pos();
  const double u2 = next_unit();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = kTwoPi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_normal_ = true;
  return radius * std::cos(angle);
}

}  // namespace spider3p
