#pragma once

#include <cstdint>
#include <string_view>

namespace tseg {

// SplitMix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Derived seed for the index-th child of a seed:
//   splitmix64(seed + (index + 1) * 0x9E3779B97F4A7C15)
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) noexcept;

// 64-bit FNV-1a, used for content hashes and config hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

// Small deterministic generator. The state update and every distribution
// below are defined bit-for-bit here, so datasets and attack inits do not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept;
  // Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) noexcept;
  // Standard normal via Box-Muller (no cached second value).
  double normal() noexcept;

 private:
  std::uint64_t state_;
};

}  // namespace tseg
