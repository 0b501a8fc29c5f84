#pragma once

// Finite-difference verification of every analytic gradient in the loss
// stack. Problems are drawn randomly but rejected until they are "tie-free":
// sorted-error gaps and hinge margins stay clear of the finite-difference
// step, so the losses are smooth around each probe point and central
// differences are trustworthy.
//
// Terms with stop-gradient targets are probed only in the variables they
// treat as free; the held-fixed paths are contract-tested separately (value
// moves, gradient stays zero).

#include <cstdint>
#include <string>
#include <vector>

namespace hle {

struct GradCheckReport {
  std::string name;
  int trials = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Runs every registered check `trials` times with central differences of
/// step `h`; an individual comparison passes when the worst per-component
/// relative error (unit floor) stays below `tolerance`.
std::vector<GradCheckReport> run_gradient_checks(int trials,
                                                 std::uint64_t seed,
                                                 double h = 1e-5,
                                                 double tolerance = 1e-4);

}  // namespace hle
