// Loss-kernel throughput: the binary extension across problem sizes (the
// sort dominates, so expect n log n) and the multi-class mean across class
// counts at a fixed pixel budget.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "hle/lovasz.hpp"
#include "hle/numeric.hpp"

namespace {

void BM_lovasz_binary(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  hle::SplitMix64 rng(1);
  std::vector<double> p(static_cast<std::size_t>(n));
  std::vector<int> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    p[static_cast<std::size_t>(i)] = rng.next_double();
    t[static_cast<std::size_t>(i)] = rng.next_double() < 0.5 ? 1 : 0;
  }
  for (auto _ : state) {
    const auto r = hle::lovasz_binary(p, t);
    benchmark::DoNotOptimize(r.loss);
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_lovasz_binary)
    ->RangeMultiplier(4)
    ->Range(64, 16384)
    ->Complexity(benchmark::oNLogN);

void BM_lovasz_softmax(benchmark::State& state) {
  const int n = 4096;
  const int classes = static_cast<int>(state.range(0));
  hle::SplitMix64 rng(2);
  std::vector<double> probs(static_cast<std::size_t>(n) * classes);
  std::vector<std::int32_t> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) {
      const double v = rng.next_double() + 1e-3;
      probs[static_cast<std::size_t>(i) * classes + k] = v;
      sum += v;
    }
    for (int k = 0; k < classes; ++k)
      probs[static_cast<std::size_t>(i) * classes + k] /= sum;
    labels[static_cast<std::size_t>(i)] =
        static_cast<std::int32_t>(rng.next_below(classes));
  }
  for (auto _ : state) {
    const auto r = hle::lovasz_softmax(probs, labels, classes);
    benchmark::DoNotOptimize(r.loss);
  }
}
BENCHMARK(BM_lovasz_softmax)->Arg(2)->Arg(4)->Arg(8)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
