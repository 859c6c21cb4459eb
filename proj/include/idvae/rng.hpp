#pragma once

#include "idvae/real.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace idvae {

/// Counter-based generator: the n-th draw is SplitMix64(seed, n), so the full
/// state is the (seed, counter) pair and streams are reproducible across
/// platforms. Normals come from Box-Muller on pairs of uniforms.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t next_u64();
  /// Uniform in the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  void fill_normal(std::span<real> out);
  std::vector<real> normal(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[below(i)]);
  }

  /// Independent stream derived from this generator's seed.
  CounterRng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace idvae
