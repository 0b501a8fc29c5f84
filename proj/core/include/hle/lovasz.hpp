#pragma once

// Lovasz extension of the Jaccard loss: convex surrogate for IoU on binary
// masks, plus the multi-class mean used for semantic scores. Gradients come
// for free -- the extension is piecewise linear in the errors.

#include <cstdint>
#include <span>
#include <vector>

namespace hle {

/// Intersection-over-union of two 0/1 vectors; defined as 1 when both are
/// empty (perfect agreement on "nothing there").
double jaccard(std::span<const int> y, std::span<const int> t);

/// Jaccard-loss increments for ground truth already permuted into
/// decreasing-error order: out[i] is the loss growth when the (i+1)-th
/// sorted pixel joins the mispredicted set.
std::vector<double> lovasz_increments(std::span<const int> t_sorted);

struct BinaryLossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d p_i
};

/// Lovasz hinge for one binary problem. p in [0,1] (values outside are
/// clamped), t in {0,1}. Errors xi_i = t_i ? 1-p_i : p_i are sorted
/// descending (ties: ascending pixel index, via stable sort).
BinaryLossResult lovasz_binary(std::span<const double> p,
                               std::span<const int> t);

enum class ClassAveraging { All, Present };

struct SoftmaxLossResult {
  double loss = 0.0;
  std::vector<double> grad;  // n x num_classes, row-major; zeros at void
};

/// Mean of one-vs-rest binary Lovasz losses over the catalog classes (or
/// only those present, with ClassAveraging::Present). `probs` is n x
/// num_classes row-major; labels hold class ids or kVoidClass (excluded).
SoftmaxLossResult lovasz_softmax(std::span<const double> probs,
                                 std::span<const std::int32_t> labels,
                                 int num_classes,
                                 ClassAveraging averaging = ClassAveraging::All);

/// Reference value of the extension by explicit set evaluation: walks the
/// sorted-error chain and prices each step with the jaccard() set function
/// evaluated from scratch. O(n^2); guards n <= 12.
double lovasz_bruteforce(std::span<const double> p, std::span<const int> t);

}  // namespace hle
