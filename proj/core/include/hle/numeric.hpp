#pragma once

// Small numeric helpers shared across the library: a portable seeded RNG,
// short-vector operations, and a central-difference gradient probe.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace hle {

// SplitMix64 (Steele, Lea, Flood: "Fast splittable pseudorandom number
// generators"). Chosen over std::mt19937 because the full sequence --
// including the uniform/gaussian transforms below -- is specified here and
// therefore reproduces bit-for-bit on any conforming platform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random mantissa bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  /// Uniform integer in [0, n); rejection sampling, no modulo bias.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("next_below: n must be positive");
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Standard normal via Box-Muller; second variate is cached.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();  // log(0) guard
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Scales `a` to unit length in place. Throws on (near-)zero input.
inline void normalize(std::span<double> a) {
  const double n = norm(a);
  if (n < 1e-300) throw std::invalid_argument("normalize: zero vector");
  for (double& x : a) x /= n;
}

/// Cosine distance 1 - a.b between unit vectors; in [0, 2].
inline double cosine_distance(std::span<const double> a,
                              std::span<const double> b) {
  return 1.0 - dot(a, b);
}

/// Random unit vector, gaussian direction.
inline std::vector<double> random_unit(SplitMix64& rng, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  while (true) {
    for (double& x : v) x = rng.next_gaussian();
    const double n = norm(v);
    if (n > 1e-12) {
      for (double& x : v) x /= n;
      return v;
    }
  }
}

/// Central difference (f(x+h) - f(x-h)) / 2h, one coordinate at a time.
/// `f` is called with the perturbed copy of `xs`.
template <class F>
std::vector<double> central_difference(F&& f, std::vector<double> xs,
                                       double h = 1e-5) {
  std::vector<double> g(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x0 = xs[i];
    xs[i] = x0 + h;
    const double fp = f(xs);
    xs[i] = x0 - h;
    const double fm = f(xs);
    xs[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
inline double max_relative_error(std::span<const double> a,
                                 std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace hle
