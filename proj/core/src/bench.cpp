#include "hle/bench.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include "hle/metrics.hpp"

namespace hle {

std::vector<BenchRow> bench_downsample(const PixelFields& fields,
                                       const SemanticState& state,
                                       const ClassCatalog& catalog,
                                       const PanopticMap& truth,
                                       std::span<const int> factors,
                                       int repeats,
                                       const DecoderConfig& config) {
  if (repeats < 1)
    throw std::invalid_argument("bench_downsample: repeats < 1");
  std::vector<BenchRow> rows;
  for (int f : factors) {
    DecoderConfig cfg = config;
    cfg.downsample_factor = f;
    PanopticMap result;
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
      const auto start = std::chrono::steady_clock::now();
      result = decode_downsampled(fields, state, catalog, cfg);
      const auto stop = std::chrono::steady_clock::now();
      times.push_back(
          std::chrono::duration<double, std::milli>(stop - start).count());
    }
    std::sort(times.begin(), times.end());
    BenchRow row;
    row.factor = f;
    row.millis = times[times.size() / 2];
    row.pq = panoptic_quality(result, truth, catalog).pq_all;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace hle
