#include "hle/lovasz.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "hle/grid.hpp"

namespace hle {

double jaccard(std::span<const int> y, std::span<const int> t) {
  if (y.size() != t.size())
    throw std::invalid_argument("jaccard: size mismatch");
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool a = y[i] != 0, b = t[i] != 0;
    inter += (a && b);
    uni += (a || b);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> lovasz_increments(std::span<const int> t_sorted) {
  const std::size_t n = t_sorted.size();
  std::vector<double> delta(n);
  long long gts = 0;
  for (int v : t_sorted) gts += (v != 0);
  // Jaccard loss after the first i sorted pixels are mispredicted; the
  // empty mispredicted set has loss 0 (also when the mask itself is empty).
  long long inter = gts, uni = gts;
  double prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (t_sorted[i] != 0)
      --inter;  // foreground flipped out of the intersection
    else
      ++uni;  // background flipped into the union
    const double cur =
        uni == 0 ? 0.0
                 : 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
    delta[i] = cur - prev;
    prev = cur;
  }
  return delta;
}

namespace {

void check_binary_targets(std::span<const int> t) {
  for (int v : t)
    if (v != 0 && v != 1)
      throw std::invalid_argument("lovasz: targets must be 0/1, got " +
                                  std::to_string(v));
}

/// Indices of p sorted by error descending; stable, so ties keep ascending
/// pixel order.
std::vector<int> sorted_by_error(std::span<const double> xi) {
  std::vector<int> idx(xi.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return xi[a] > xi[b]; });
  return idx;
}

}  // namespace

BinaryLossResult lovasz_binary(std::span<const double> p,
                               std::span<const int> t) {
  if (p.size() != t.size())
    throw std::invalid_argument("lovasz_binary: size mismatch");
  check_binary_targets(t);
  const std::size_t n = p.size();
  BinaryLossResult out;
  out.grad.assign(n, 0.0);
  if (n == 0) return out;

  std::vector<double> xi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = std::clamp(p[i], 0.0, 1.0);
    xi[i] = t[i] ? 1.0 - pi : pi;
  }
  const std::vector<int> order = sorted_by_error(xi);
  std::vector<int> t_sorted(n);
  for (std::size_t i = 0; i < n; ++i) t_sorted[i] = t[order[i]];
  const std::vector<double> delta = lovasz_increments(t_sorted);

  for (std::size_t i = 0; i < n; ++i) {
    const int px = order[i];
    out.loss += xi[px] * delta[i];
    // xi = t ? 1-p : p, so d loss / d p flips sign on foreground.
    out.grad[px] = t[px] ? -delta[i] : delta[i];
  }
  return out;
}

SoftmaxLossResult lovasz_softmax(std::span<const double> probs,
                                 std::span<const std::int32_t> labels,
                                 int num_classes, ClassAveraging averaging) {
  if (num_classes <= 0)
    throw std::invalid_argument("lovasz_softmax: need at least one class");
  const std::size_t n = labels.size();
  if (probs.size() != n * static_cast<std::size_t>(num_classes))
    throw std::invalid_argument("lovasz_softmax: probs shape mismatch");

  std::vector<int> valid;
  valid.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t l = labels[i];
    if (l == kVoidClass) continue;
    if (l < 0 || l >= num_classes)
      throw std::invalid_argument("lovasz_softmax: label " +
                                  std::to_string(l) +
                                  " outside the catalog");
    valid.push_back(static_cast<int>(i));
  }

  SoftmaxLossResult out;
  out.grad.assign(probs.size(), 0.0);

  std::vector<double> pc(valid.size());
  std::vector<int> tc(valid.size());
  double sum = 0.0;
  int counted = 0;
  // Deferred per-class grads: divide by the class count only once known.
  std::vector<std::pair<int, std::vector<double>>> grads;
  for (int c = 0; c < num_classes; ++c) {
    bool present = false;
    for (std::size_t k = 0; k < valid.size(); ++k) {
      pc[k] = probs[static_cast<std::size_t>(valid[k]) * num_classes + c];
      tc[k] = labels[valid[k]] == c;
      present |= tc[k] != 0;
    }
    if (averaging == ClassAveraging::Present && !present) continue;
    BinaryLossResult bl = lovasz_binary(pc, tc);
    sum += bl.loss;
    ++counted;
    grads.emplace_back(c, std::move(bl.grad));
  }
  if (counted == 0) return out;  // nothing to average: loss 0
  out.loss = sum / counted;
  for (const auto& [c, g] : grads)
    for (std::size_t k = 0; k < valid.size(); ++k)
      out.grad[static_cast<std::size_t>(valid[k]) * num_classes + c] =
          g[k] / counted;
  return out;
}

double lovasz_bruteforce(std::span<const double> p, std::span<const int> t) {
  if (p.size() != t.size())
    throw std::invalid_argument("lovasz_bruteforce: size mismatch");
  if (p.size() > 12)
    throw std::invalid_argument("lovasz_bruteforce: n > 12");
  check_binary_targets(t);
  const std::size_t n = p.size();
  if (n == 0) return 0.0;

  std::vector<double> xi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = std::clamp(p[i], 0.0, 1.0);
    xi[i] = t[i] ? 1.0 - pi : pi;
  }
  const std::vector<int> order = sorted_by_error(xi);

  // Price each chain step J(S_i) - J(S_{i-1}) by materializing the flipped
  // prediction vector and re-evaluating the set function from scratch.
  std::vector<int> y(t.begin(), t.end());
  double prev = 1.0 - jaccard(y, t);  // empty mispredicted set
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int px = order[i];
    y[px] = 1 - t[px];
    const double cur = 1.0 - jaccard(y, t);
    loss += xi[px] * (cur - prev);
    prev = cur;
  }
  return loss;
}

}  // namespace hle
