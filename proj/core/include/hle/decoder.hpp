#pragma once

// Turns prediction fields into a panoptic map: semantic argmax, seed
// non-maximum suppression, greedy seed merging, per-pixel mask assignment
// and stuff handling. Every stage is deterministic; ties resolve toward the
// smaller class id / pixel index.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "hle/embed.hpp"
#include "hle/grid.hpp"

namespace hle {

struct DecoderConfig {
  double seed_threshold = 0.5;   // minimum seediness for a candidate
  double merge_threshold = 0.5;  // affinity at/above which seeds fuse
  double mask_threshold = 0.5;   // minimum affinity to claim a pixel
  double stuff_threshold = 0.25; // minimum psi for a stuff pixel
  int min_stuff_area = 0;        // stuff segments smaller than this vanish
  int downsample_factor = 1;     // 1, 2, 4 or 8
  bool things_only_seeds = false;  // drop candidates on stuff argmax
};

/// A surviving or prospective seed: the pixel it sits on plus the fields
/// sampled there. `embedding` holds only the instance-kernel channels.
struct SeedCandidate {
  int pixel = 0;
  double score = 0.0;
  std::int32_t class_id = 0;
  std::vector<double> embedding;
  std::array<double, 2> rho{0.0, 0.0};
  double sigma = 0.0;
  double sigma_spatial = 0.0;
};

/// Per-pixel argmax of the semantic scores (ties: smallest class id).
LabelMap semantic_argmax(const PixelFields& fields, const SemanticState& state,
                         const EmbeddingLayout& layout);

/// 3x3 edge-clamped max filter: pixel survives when it attains its window
/// maximum and is the first row-major attainer within its own window (so a
/// plateau yields exactly one seed). Returns pixel indices, ascending.
std::vector<int> seed_nms(const FieldGrid& seed);

/// Affinity of pixel b to seed a, using a's embedding, position and
/// bandwidths: exp(-d_cos/(2 sigma_a^2) - |rho_b - rho_a|^2/(2 sp_a^2)).
/// A seed has affinity 1 to itself.
double pair_affinity(const SeedCandidate& a, std::span<const double> e_ins_b,
                     std::array<double, 2> rho_b);

/// Greedy merge in descending score order (ties: ascending pixel index): a
/// candidate survives only if its affinity to every already-accepted seed is
/// below the merge threshold. Survivors keep that order.
std::vector<SeedCandidate> merge_seeds(std::vector<SeedCandidate> candidates,
                                       const DecoderConfig& config);

/// Assigns every pixel to the surviving seed with the highest affinity,
/// provided it reaches the mask threshold (ties: earlier survivor). Thing
/// segment ids count up per class in survivor order; pixels no seed claims
/// stay void for stuff_filter to consider.
PanopticMap assign_masks(std::span<const SeedCandidate> survivors,
                         const PixelFields& fields, const LabelMap& semantic,
                         const EmbeddingLayout& layout,
                         const ClassCatalog& catalog,
                         const DecoderConfig& config);

/// Claims unassigned stuff-argmax pixels for their class when psi reaches
/// the stuff threshold; one segment per stuff class, dropped below
/// min_stuff_area. Everything still unclaimed ends void.
void stuff_filter(PanopticMap& pan, const LabelMap& semantic,
                  const PixelFields& fields, const SemanticState& state,
                  const EmbeddingLayout& layout, const ClassCatalog& catalog,
                  const DecoderConfig& config);

/// Full pipeline. The layout is inferred from the field/state widths.
PanopticMap decode(const PixelFields& fields, const SemanticState& state,
                   const ClassCatalog& catalog, const DecoderConfig& config);

/// Strided decode: subsample the fields by taking the top-left pixel of
/// every f x f block, decode at low resolution, then replicate blocks back
/// up (truncated at the original borders). factor 1 is exactly decode().
PanopticMap decode_downsampled(const PixelFields& fields,
                               const SemanticState& state,
                               const ClassCatalog& catalog,
                               const DecoderConfig& config);

}  // namespace hle
