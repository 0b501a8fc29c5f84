#pragma once

// File formats. Everything is explicit little-endian so artifacts written on
// one machine load on any other.
//
// Binary grid container ("HLE1"): magic bytes 'H''L''E''1', then four
// little-endian u32 fields -- height, width, channels, dtype (0 = int32,
// 1 = float32) -- then the row-major, channel-interleaved payload.
// Multi-grid files are just consecutive records:
//   fields file:  e (D ch, f32), sigma (1), sigma_spatial (1), seed (1)
//   state file:   mu (num_classes x dim x 1, f32), sigma (num_classes x 1 x 1)
//
// Text sidecars are UTF-8, one record per line, tab-separated:
//   segment table:  segment_id <TAB> class_id <TAB> thing|stuff
//   class catalog:  class_id <TAB> name <TAB> thing|stuff
// Config files are `key = value` lines; '#' starts a comment; unknown keys
// are reported as errors by the consumers.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hle/embed.hpp"
#include "hle/grid.hpp"

namespace hle::io {

enum class Dtype : std::uint32_t { I32 = 0, F32 = 1 };

struct GridHeader {
  std::uint32_t height = 0, width = 0, channels = 0;
  Dtype dtype = Dtype::I32;
};

void write_grid_i32(std::ostream& os, int height, int width, int channels,
                    std::span<const std::int32_t> data);
/// Doubles are stored as float32 on disk.
void write_grid_f32(std::ostream& os, int height, int width, int channels,
                    std::span<const double> data);

struct AnyGrid {
  GridHeader header;
  std::vector<std::int32_t> i32;  // filled when dtype == I32
  std::vector<double> f32;        // filled when dtype == F32 (widened)
};
/// Reads one record; throws std::runtime_error on bad magic, unknown dtype
/// or truncated payload.
AnyGrid read_grid(std::istream& is);

void save_label_map(const std::filesystem::path& path, const LabelMap& m);
LabelMap load_label_map(const std::filesystem::path& path);

void save_instance_map(const std::filesystem::path& path,
                       const InstanceMap& m);
InstanceMap load_instance_map(const std::filesystem::path& path);

void save_field_grid(const std::filesystem::path& path, const FieldGrid& g);
FieldGrid load_field_grid(const std::filesystem::path& path);

void save_fields(const std::filesystem::path& path, const PixelFields& f);
PixelFields load_fields(const std::filesystem::path& path);

void save_state(const std::filesystem::path& path, const SemanticState& s);
SemanticState load_state(const std::filesystem::path& path);

/// Writes `path` (raster) and `path` + ".segments" (table).
void save_panoptic(const std::filesystem::path& path, const PanopticMap& p);
PanopticMap load_panoptic(const std::filesystem::path& path);

void save_catalog(const std::filesystem::path& path, const ClassCatalog& c);
ClassCatalog load_catalog(const std::filesystem::path& path);

/// `key = value` pairs in file order; '#' comments and blank lines skipped.
/// Duplicate keys are an error.
std::vector<std::pair<std::string, std::string>> read_kv_config(
    const std::filesystem::path& path);

}  // namespace hle::io
