#pragma once

// Quick-look renderings of field grids as binary PPM (P6) images.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hle/grid.hpp"

namespace hle {

/// Binary P6 with maxval 255; rgb is row-major, 3 bytes per pixel.
void write_ppm(const std::filesystem::path& path, int width, int height,
               std::span<const std::uint8_t> rgb);

/// Renders channel triples (0-2, 3-5, ...) of an embedding grid, mapping
/// [-1, 1] affinely onto [0, 255]; channels past the end render as 0.
/// Files are named <prefix>.<group>.ppm; returns the paths written.
std::vector<std::filesystem::path> viz_embeddings(
    const FieldGrid& e, const std::filesystem::path& prefix);

/// Grayscale rendering of a 1-channel grid, [lo, hi] onto [0, 255] (clamped).
void viz_scalar(const FieldGrid& g, double lo, double hi,
                const std::filesystem::path& path);

/// Cosine distance of every pixel's embedding to the one at (row, col) on a
/// warm-to-cold palette: near is red (255,0,0), far is blue (0,0,255),
/// linear in between (R = 255 t, G = 0, B = 255 (1-t) with t = 1 - d/2).
void viz_distance(const FieldGrid& e, int row, int col,
                  const std::filesystem::path& path);

}  // namespace hle
