#pragma once

// Spreads k points on the unit (d-1)-sphere by minimizing an inverse
// cosine-distance energy -- the initializer for semantic class anchors.
// Known optima land at antipodes (k=2), a planar simplex (dot -1/2 for k=3)
// and the regular tetrahedron (dot -1/3 for k=4, d=3).

#include <cstdint>
#include <vector>

namespace hle {

struct ThomsonConfig {
  int k = 1;               // number of points
  int d = 2;               // ambient dimension (>= 2)
  int steps = 500;         // descent iteration budget
  double step_size = 0.1;  // initial step; adapted by backtracking
  std::uint64_t rng_seed = 0;
  double epsilon = 1e-6;   // floor on pairwise d_cos inside the optimizer
};

/// Energy sum over ordered pairs of 1 / d_cos(mu_i, mu_j). Throws
/// std::invalid_argument when any pair is closer than epsilon (the energy
/// is singular there).
double thomson_energy(const std::vector<double>& points, int k, int d,
                      double epsilon = 1e-6);

/// Projected gradient descent from a seeded random start: step along the
/// negative energy gradient, renormalize each row, halve the step when the
/// energy would increase. Deterministic for a fixed config. Returns k unit
/// rows (k x d, row-major).
std::vector<double> thomson_init(const ThomsonConfig& config);

}  // namespace hle
