#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace effzero {

// Deterministic random stream. All distribution transforms are implemented
// here rather than via std:: distributions, whose algorithms are
// implementation-defined; a given seed must reproduce the same draws on any
// standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  // Derive an independent stream, e.g. one per worker or per episode.
  static Rng derive(uint64_t seed, uint64_t stream) {
    return Rng(mix(seed, stream));
  }

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(gen_() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller, one cached draw.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Gamma(alpha, 1) via Marsaglia-Tsang; alpha < 1 boosted through
  // Gamma(alpha + 1) * U^(1/alpha).
  double gamma(double alpha) {
    if (alpha < 1.0) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * (x * x) * (x * x)) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  // Symmetric Dirichlet(alpha) over n categories.
  std::vector<double> dirichlet(double alpha, int n) {
    std::vector<double> out(n);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      out[i] = gamma(alpha);
      sum += out[i];
    }
    if (sum <= 0.0) {
      for (auto& v : out) v = 1.0 / n;
      return out;
    }
    for (auto& v : out) v /= sum;
    return out;
  }

  // Sample an index from an (unnormalized) weight vector.
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = uniform() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      r -= weights[i];
      if (r < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

 private:
  static uint64_t mix(uint64_t a, uint64_t b) {
    // splitmix64 over the pair
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace effzero
