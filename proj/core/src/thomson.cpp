#include "hle/thomson.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "hle/numeric.hpp"

namespace hle {

namespace {

std::span<const double> row(const std::vector<double>& pts, int i, int d) {
  return {pts.data() + static_cast<std::size_t>(i) * d,
          static_cast<std::size_t>(d)};
}

/// Energy with the pairwise distance floored at epsilon; finite everywhere,
/// which is what the optimizer descends on.
double clamped_energy(const std::vector<double>& pts, int k, int d,
                      double epsilon) {
  double e = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const double dc =
          std::max(cosine_distance(row(pts, i, d), row(pts, j, d)), epsilon);
      e += 2.0 / dc;  // ordered pairs: (i,j) and (j,i)
    }
  return e;
}

/// d energy / d mu_i = sum_j 2 mu_j / d_cos(mu_i, mu_j)^2 (floored); the
/// floor keeps the push finite but still directed away from neighbors.
std::vector<double> energy_gradient(const std::vector<double>& pts, int k,
                                    int d, double epsilon) {
  std::vector<double> g(pts.size(), 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const double dc =
          std::max(cosine_distance(row(pts, i, d), row(pts, j, d)), epsilon);
      const double f = 2.0 / (dc * dc);
      for (int c = 0; c < d; ++c) {
        g[static_cast<std::size_t>(i) * d + c] +=
            f * pts[static_cast<std::size_t>(j) * d + c];
        g[static_cast<std::size_t>(j) * d + c] +=
            f * pts[static_cast<std::size_t>(i) * d + c];
      }
    }
  return g;
}

void renormalize_rows(std::vector<double>& pts, int k, int d) {
  for (int i = 0; i < k; ++i)
    normalize(std::span<double>(pts.data() + static_cast<std::size_t>(i) * d,
                                static_cast<std::size_t>(d)));
}

}  // namespace

double thomson_energy(const std::vector<double>& points, int k, int d,
                      double epsilon) {
  if (k < 0 || d < 1 ||
      points.size() != static_cast<std::size_t>(k) * static_cast<std::size_t>(d))
    throw std::invalid_argument("thomson_energy: shape mismatch");
  double e = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const double dc = cosine_distance(row(points, i, d), row(points, j, d));
      if (dc < epsilon)
        throw std::invalid_argument(
            "thomson_energy: coincident points (d_cos < epsilon)");
      e += 2.0 / dc;
    }
  return e;
}

std::vector<double> thomson_init(const ThomsonConfig& config) {
  if (config.k < 1) throw std::invalid_argument("thomson_init: k < 1");
  if (config.d < 2) throw std::invalid_argument("thomson_init: d < 2");
  if (config.epsilon <= 0.0)
    throw std::invalid_argument("thomson_init: epsilon <= 0");

  SplitMix64 rng(config.rng_seed);
  std::vector<double> pts(static_cast<std::size_t>(config.k) * config.d);
  for (int i = 0; i < config.k; ++i) {
    const std::vector<double> u = random_unit(rng, config.d);
    std::copy(u.begin(), u.end(),
              pts.begin() + static_cast<std::size_t>(i) * config.d);
  }
  if (config.k == 1) return pts;  // no pairs, nothing to optimize

  double energy = clamped_energy(pts, config.k, config.d, config.epsilon);
  double step = config.step_size;
  for (int it = 0; it < config.steps; ++it) {
    const std::vector<double> g =
        energy_gradient(pts, config.k, config.d, config.epsilon);
    std::vector<double> cand = pts;
    for (std::size_t i = 0; i < cand.size(); ++i) cand[i] -= step * g[i];
    renormalize_rows(cand, config.k, config.d);
    const double cand_energy =
        clamped_energy(cand, config.k, config.d, config.epsilon);
    if (cand_energy <= energy) {
      pts = std::move(cand);
      energy = cand_energy;
    } else {
      step *= 0.5;  // backtrack; the iteration still counts against the budget
      if (step < 1e-14) break;
    }
  }
  renormalize_rows(pts, config.k, config.d);
  return pts;
}

}  // namespace hle
