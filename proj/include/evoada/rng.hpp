#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace evoada {

/// Seeded random source with platform-independent draws.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The std:: distributions are implementation-defined, so the
/// bounded-integer, uniform-real and normal draws are implemented here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_below(std::uint64_t bound);

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (no cached second value, so the state
  /// is fully described by the engine).
  double normal();

  bool bernoulli(double p) { return uniform01() < p; }

  /// Opaque textual engine state for checkpoints.
  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer; a bijection on 64-bit words.
std::uint64_t mix64(std::uint64_t x);

/// Derives a child seed from a parent seed and a stream index. Distinct
/// indices under the same parent give distinct seeds.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

}  // namespace evoada
