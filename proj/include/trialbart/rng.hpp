#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace trialbart {

// SplitMix64 finalizer. Used to derive independent substream seeds from a
// master seed so that parallel work (replications, permutations) stays
// deterministic regardless of scheduling.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return mix_seed(master ^ mix_seed(stream + 0x6a09e667f3bcc909ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(master, a), b);
}

// Seeded random source with the draw types the samplers need. Distribution
// objects are constructed per call so a draw consumes a fixed amount of
// engine state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  // 0..n-1
  int uniform_int(int n) {
    return std::uniform_int_distribution<int>(0, n - 1)(engine_);
  }

  bool bernoulli(double p) {
    return std::bernoulli_distribution(p)(engine_);
  }

  double normal(double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(engine_);
  }

  double gamma(double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
  }

  // Inverse-gamma in shape-rate form: X ~ IG(a, b) iff 1/X ~ Gamma(a, rate b).
  double inv_gamma(double shape, double rate) {
    double g = std::gamma_distribution<double>(shape, 1.0)(engine_);
    return rate / std::max(g, 1e-290);
  }

  double chi_squared(double df) {
    return 2.0 * std::gamma_distribution<double>(0.5 * df, 1.0)(engine_);
  }

  // Flat Dirichlet(1,...,1) over n cells.
  std::vector<double> dirichlet_flat(std::size_t n) {
    std::vector<double> w(n);
    double total = 0.0;
    for (auto& wi : w) {
      wi = std::exponential_distribution<double>(1.0)(engine_);
      total += wi;
    }
    for (auto& wi : w) wi /= total;
    return w;
  }

  // Fisher-Yates; spelled out so the permutation order does not depend on
  // the standard library version.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace trialbart
