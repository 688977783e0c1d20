#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace gmot {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

// Deterministic RNG. All sampling transforms are hand-rolled so streams do
// not depend on the standard library's distribution implementations.
struct Rng {
  std::mt19937_64 eng;

  explicit Rng(uint64_t seed) : eng(seed) {}

  uint64_t u64() { return eng(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // inclusive range
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Marsaglia-Tsang
  double gamma_sample(double shape) {
    if (shape < 1.0) {
      const double u = 1.0 - uniform();  // (0, 1]
      return gamma_sample(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      const double x = normal();
      const double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      const double v = t * t * t;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma_sample(a);
    const double y = gamma_sample(b);
    return x / (x + y);
  }

  int poisson(double mean) {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    double p = 1.0;
    int k = 0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  size_t pick_weighted(const std::vector<double>& w) {
    double total = 0;
    for (double v : w) total += v;
    double r = uniform() * total;
    for (size_t i = 0; i < w.size(); ++i) {
      r -= w[i];
      if (r < 0) return i;
    }
    return w.empty() ? 0 : w.size() - 1;
  }
};

}  // namespace gmot
