#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace stepcast {

/// Mixes a base seed with any number of integers into a new 64-bit seed.
/// Used to derive independent streams (per step, per procedure, ...) without
/// carrying generator state around.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

/// Seeded generator with platform-stable uniform and normal draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller (the spare value is cached).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace stepcast
