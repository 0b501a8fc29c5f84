#pragma once

// Seeded synthetic scenes: horizontal stuff bands with discs and rectangles
// stamped on top (later shapes occlude earlier ones), plus analytically
// constructed prediction fields that decode back to the ground truth.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hle/embed.hpp"
#include "hle/grid.hpp"

namespace hle {

enum class ShapeKind { Disc, Rectangle };

struct ThingSpec {
  std::int32_t class_id = 0;
  int count_min = 0, count_max = 0;  // inclusive range
  ShapeKind shape = ShapeKind::Disc;
  // size as a fraction of min(height, width): disc radius, or rectangle
  // half-extents (drawn separately per axis)
  double size_min = 0.1, size_max = 0.2;
};

struct BandSpec {
  std::int32_t class_id = 0;
  double fraction = 0.0;  // of the image height; fractions must sum to 1
};

struct SceneSpec {
  int height = 0, width = 0;
  std::vector<BandSpec> bands;    // top to bottom
  std::vector<ThingSpec> things;  // stamped in order
  std::uint64_t rng_seed = 0;
  ClassCatalog catalog;
};

struct Scene {
  LabelMap labels;
  InstanceMap instances;
  ClassCatalog catalog;
};

/// Deterministic scene from a spec: bands fill the label map, then each
/// thing spec draws its count and stamps shapes at uniform positions.
/// Instances fully occluded by later stamps are dropped and ids renumbered
/// densely from 1. Throws on invalid specs (fractions not summing to 1,
/// band classes not stuff, thing classes not things, bad size ranges).
Scene generate(const SceneSpec& spec);

/// The named fixture scenes used across tests and benchmarks:
///   tiny      32 x 48, one thing class (2 discs), two stuff bands
///   small     64 x 96, two thing classes (3 boxes + 2 discs), three bands
///   occluded  64 x 96, large overlapping discs
///   dense     96 x 128, twelve instances over three bands
std::vector<std::pair<std::string, SceneSpec>> standard_suite();

struct IdealFieldOptions {
  int dim = 12;
  double sigma_ins = 0.1;
  double sigma_spatial = 0.45;
  double sigma_sem = 0.3;
  double instance_offset = 0.3;  // tangent nudge separating same-class instances
  std::uint64_t anchor_seed = 1; // seeds the anchor point spreading
};

/// Hand-built fields that decode to the ground truth with the default
/// decoder settings: class anchors spread on the sphere, stuff pixels sit on
/// their anchor, instance pixels on a per-instance offset direction, and the
/// seed map holds each instance's own affinity (zero on stuff).
std::pair<PixelFields, SemanticState> ideal_fields(
    const LabelMap& labels, const InstanceMap& instances,
    const ClassCatalog& catalog, const IdealFieldOptions& options = {});

}  // namespace hle
