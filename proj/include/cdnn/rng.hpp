#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cdnn {

/// Deterministic, platform-independent random generator.
///
/// The core step is splitmix64: the state advances by a fixed odd constant
/// and the output is a bijective mix of the counter, so the draw sequence
/// depends only on the seed and the number of calls made. std::mt19937 plus
/// the standard distributions is avoided on purpose: distribution output is
/// implementation-defined and would break cross-platform reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Box-Muller normal draw; the paired deviate is cached for the next call.
  double normal(double mean, double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  /// Uniform integer in [0, n). Lemire multiply-shift; bias below 2^-32 for
  /// the index ranges used here, and identical on every platform.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return next_double() < p; }

  /// Derives an independent stream, e.g. one per fold or per item.
  Rng fork(std::uint64_t stream) const {
    Rng child(state_ ^ (0xA0761D6478BD642Full * (stream + 1)));
    child.next_u64();
    return child;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Fisher-Yates shuffle driven by Rng, deterministic under a fixed seed.
template <typename Container>
void shuffle(Container& items, Rng& rng) {
  const std::uint64_t n = items.size();
  for (std::uint64_t i = n; i > 1; --i) {
    const std::uint64_t j = rng.next_below(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace cdnn
