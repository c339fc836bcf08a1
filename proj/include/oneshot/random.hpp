#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>

namespace oneshot {

/// Seeded generator with platform-independent derived distributions.
///
/// std::uniform_real_distribution and friends are implementation-defined, so
/// the draws here are computed directly from the engine's 64-bit output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer in [lo, hi] inclusive.
  long between(long lo, long hi);
  double normal();

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) std::iter_swap(first + (i - 1), first + below(i));
  }

 private:
  std::mt19937_64 engine_;
};

// Seed derivation. Every random stream in a run is a pure function of the
// run seed: derive_seed(run_seed, "tag", index...) mixes the tag hash and the
// indices through splitmix64. Tags in use: "fold", "epoch", "init", "pairs",
// "augment", "image", "split", "class", "view", "noise".
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t i, std::uint64_t j);

}  // namespace oneshot
