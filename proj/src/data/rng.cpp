#include "idvae/rng.hpp"

#include <cmath>
#include <numbers>

namespace idvae {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t CounterRng::next_u64() {
  return splitmix64(splitmix64(seed_) ^ (counter_++ * 0xD1B54A32D192ED03ull));
}

double CounterRng::uniform() {
  // 53 random bits, shifted half a step off zero.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t CounterRng::below(std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

void CounterRng::fill_normal(std::span<real> out) {
  for (std::size_t i = 0; i < out.size(); i += 2) {
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    out[i] = static_cast<real>(r * std::cos(theta));
    if (i + 1 < out.size()) out[i + 1] = static_cast<real>(r * std::sin(theta));
  }
}

std::vector<real> CounterRng::normal(std::size_t n) {
  std::vector<real> out(n);
  fill_normal(out);
  return out;
}

CounterRng CounterRng::fork(std::uint64_t stream) const {
  return CounterRng(splitmix64(seed_ ^ splitmix64(stream + 0x632BE59BD9B4E019ull)));
}

}  // namespace idvae
