#pragma once

#include <array>
#include <cstdint>

namespace compose {

// Deterministic generator shared by every stochastic operation.
//
// Algorithm (documented so other ports can reproduce streams exactly):
//   * state: xoshiro256** (Blackman & Vigna), four 64-bit words;
//   * seeding: the four words are successive outputs of splitmix64 started
//     at `seed`;
//   * uniform(): top 53 bits of next() scaled by 2^-53, in [0, 1);
//   * uniform_index(n): Lemire's multiply-shift with rejection;
//   * normal(): Marsaglia polar method on 2*uniform()-1 pairs, the spare
//     deviate is cached and returned on the next call;
//   * fork(stream): a child generator seeded with
//     splitmix64(seed ^ (stream * 0x9E3779B97F4A7C15)), independent of how
//     far the parent has advanced.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();

  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const noexcept { return seed_; }
  // Number of 64-bit words drawn so far.
  std::uint64_t position() const noexcept { return position_; }

 private:
  std::uint64_t seed_;
  std::uint64_t position_ = 0;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace compose
