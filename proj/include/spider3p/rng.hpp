#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace spider3p {

// Counter-derived xoshiro256++ stream. Every logically independent consumer
// (one minibatch draw, one Monte Carlo evaluation of one component at one
// state, ...) owns its own stream derived from the run seed and an integer
// path, so results do not depend on evaluation order.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  // Derives a stream keyed by (root_seed, path...). Identical keys give
  // bit-identical streams; distinct keys give statistically independent ones.
  static RngStream derive(std::uint64_t root_seed,
                          std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64();

  // Unbiased uniform draw from {0, 1, ..., bound-1}; bound >= 1.
  std::uint64_t next_below(std::uint64_t bound);

  // Uniform on [0, 1), 53-bit resolution.
  double next_unit();

  // Uniform on (0, 1]; never zero, safe under log().
  double next_unit_pos();

  // Standard normal via Box-Muller; second value of each pair is cached.
  double next_normal();

 private:
  std::array<std::uint64_t, 4> state_{};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;

  void seed_from(std::uint64_t x);
};

}  // namespace spider3p
