#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace v2g {

// splitmix64 finalizer; used to derive independent stream seeds from a master
// seed so that checkpoint resume can re-derive any stream without persisting
// engine state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// mt19937_64 outputs are pinned by the standard; the distributions below are
// hand-rolled because the std:: distribution algorithms are not, and frozen
// test values must not depend on the standard library build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n == 0");
    const std::uint64_t limit = ~0ULL - ~0ULL % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Box-Muller; one value per call keeps the stream layout obvious.
  double normal(double mean, double stddev) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal_clipped(double mean, double stddev, double lo, double hi) {
    double x = normal(mean, stddev);
    if (x < lo) x = lo;
    if (x > hi) x = hi;
    return x;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // index sampled proportionally to non-negative weights; all-zero -> uniform
  std::size_t weighted_index(const std::vector<double>& weights) {
    if (weights.empty()) throw std::invalid_argument("weighted_index: empty");
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw std::invalid_argument("weighted_index: negative weight");
      total += w;
    }
    if (total <= 0.0) return static_cast<std::size_t>(uniform_index(weights.size()));
    const double x = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (x < acc) return i;
    }
    return weights.size() - 1;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace v2g
