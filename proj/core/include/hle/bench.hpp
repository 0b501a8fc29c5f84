#pragma once

// Wall-clock comparison of the strided decoder across downsampling factors.

#include <span>
#include <vector>

#include "hle/decoder.hpp"
#include "hle/embed.hpp"
#include "hle/grid.hpp"

namespace hle {

struct BenchRow {
  int factor = 1;
  double millis = 0.0;  // median over the repeats
  double pq = 0.0;      // against the supplied ground truth
};

/// Times decode_downsampled at each factor (median of `repeats` runs) and
/// scores the result against `truth`.
std::vector<BenchRow> bench_downsample(const PixelFields& fields,
                                       const SemanticState& state,
                                       const ClassCatalog& catalog,
                                       const PanopticMap& truth,
                                       std::span<const int> factors,
                                       int repeats = 5,
                                       const DecoderConfig& config = {});

}  // namespace hle
