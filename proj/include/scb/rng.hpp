#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace scb {

// splitmix64 finalizer, used to derive substream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_label(std::string_view label) {
  // FNV-1a
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

// Seeded generator addressed by (seed, stream label, index). Identical
// addresses produce identical draw sequences, so batches can be generated
// in any order or in parallel without perturbing reproducibility.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0)
      : gen_(mix64(mix64(seed ^ hash_label(stream)) + index)) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; two uniforms per draw, no caching.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double exponential() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(u);
  }

  // Gamma(shape, 1) via Marsaglia-Tsang; shape >= 1 here is enough.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Index in [0, p.size()) distributed according to p (assumed to sum to 1).
  int categorical(const Eigen::VectorXd& p) {
    const double u = uniform();
    double acc = 0.0;
    const int n = static_cast<int>(p.size());
    for (int i = 0; i < n; ++i) {
      acc += p[i];
      if (u < acc) return i;
    }
    return n - 1;
  }

  // k distinct values from [0, n), order not meaningful.
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> out;
    out.reserve(k);
    // Floyd's algorithm
    for (int j = n - k; j < n; ++j) {
      const int t = static_cast<int>(next_u64() % static_cast<std::uint64_t>(j + 1));
      if (std::find(out.begin(), out.end(), t) == out.end())
        out.push_back(t);
      else
        out.push_back(j);
    }
    return out;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace scb
