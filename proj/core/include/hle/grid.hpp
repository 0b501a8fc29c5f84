#pragma once

// Core raster containers and label bookkeeping: semantic class catalog,
// per-pixel label/instance/field grids, panoptic segment maps, and the
// segment-id codec shared by ground truth and decoder output.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hle {

/// Label value marking unlabeled ("void") pixels in a LabelMap.
inline constexpr std::int32_t kVoidClass = 255;
/// Segment id marking unassigned pixels in a PanopticMap.
inline constexpr std::int32_t kVoidSegment = 0;
/// Instance indices per class live in [0, 1000).
inline constexpr std::int32_t kMaxInstancesPerClass = 1000;

enum class ClassKind { Thing, Stuff };

struct ClassInfo {
  std::int32_t id = 0;
  std::string name;
  ClassKind kind = ClassKind::Stuff;
};

/// Ordered set of semantic classes. Ids must be unique, contiguous and start
/// at 0 so class ids can double as row indices into per-class arrays.
class ClassCatalog {
 public:
  ClassCatalog() = default;
  explicit ClassCatalog(std::vector<ClassInfo> classes);

  int size() const { return static_cast<int>(classes_.size()); }
  bool contains(std::int32_t id) const {
    return id >= 0 && id < static_cast<std::int32_t>(classes_.size());
  }
  const ClassInfo& at(std::int32_t id) const;
  bool is_thing(std::int32_t id) const {
    return at(id).kind == ClassKind::Thing;
  }
  bool is_stuff(std::int32_t id) const {
    return at(id).kind == ClassKind::Stuff;
  }
  int thing_count() const;
  int stuff_count() const { return size() - thing_count(); }
  const std::vector<ClassInfo>& classes() const { return classes_; }

 private:
  std::vector<ClassInfo> classes_;
};

/// Per-pixel semantic class ids (kVoidClass where unlabeled). Row-major.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> data;

  static LabelMap filled(int height, int width, std::int32_t value);
  int pixels() const { return height * width; }
  std::int32_t& at(int row, int col) { return data[row * width + col]; }
  std::int32_t at(int row, int col) const { return data[row * width + col]; }
};

/// Per-pixel instance ids; 0 means "no instance". Ids are global across the
/// image, not per class.
struct InstanceMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> data;

  static InstanceMap filled(int height, int width, std::int32_t value);
  int pixels() const { return height * width; }
  std::int32_t& at(int row, int col) { return data[row * width + col]; }
  std::int32_t at(int row, int col) const { return data[row * width + col]; }
};

/// Dense H x W x C grid of doubles, row-major with interleaved channels:
/// data[(row*width + col)*channels + c].
struct FieldGrid {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<double> data;

  static FieldGrid zeros(int height, int width, int channels);
  static FieldGrid filled(int height, int width, int channels, double value);

  int pixels() const { return height * width; }
  double& at(int row, int col, int channel) {
    return data[(static_cast<std::size_t>(row) * width + col) * channels +
                channel];
  }
  double at(int row, int col, int channel) const {
    return data[(static_cast<std::size_t>(row) * width + col) * channels +
                channel];
  }
  /// Channel vector of pixel `index` (row-major pixel index).
  std::span<double> pixel(int index) {
    return {data.data() + static_cast<std::size_t>(index) * channels,
            static_cast<std::size_t>(channels)};
  }
  std::span<const double> pixel(int index) const {
    return {data.data() + static_cast<std::size_t>(index) * channels,
            static_cast<std::size_t>(channels)};
  }
};

struct SegmentInfo {
  std::int32_t id = 0;
  std::int32_t class_id = 0;
  bool is_thing = false;
};

/// Panoptic segmentation: per-pixel segment ids plus a table describing each
/// segment. Raster values are either kVoidSegment or an id from the table.
struct PanopticMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> data;
  std::vector<SegmentInfo> segments;

  int pixels() const { return height * width; }
  std::int32_t& at(int row, int col) { return data[row * width + col]; }
  std::int32_t at(int row, int col) const { return data[row * width + col]; }
};

/// Segment id codec: class_id * 1000 + instance_index.
/// Throws if instance_index is outside [0, 1000) or the result would be the
/// reserved void id 0 (stuff segment of class 0 -- callers must order their
/// catalogs so class 0 is a thing class, or avoid stuff ids there).
std::int32_t encode_panoptic_id(std::int32_t class_id,
                                std::int32_t instance_index);
std::pair<std::int32_t, std::int32_t> decode_panoptic_id(std::int32_t id);

/// Pixel index list of one ground-truth instance.
struct InstancePixels {
  std::int32_t instance_id = 0;
  std::int32_t class_id = 0;
  std::vector<int> pixels;  // row-major indices, ascending
};

/// One entry per distinct nonzero instance id, ordered by id ascending.
/// The class of an instance is the label shared by its pixels; throws
/// std::invalid_argument if an instance id spans two semantic classes or
/// sits on void labels.
std::vector<InstancePixels> extract_instances(const LabelMap& labels,
                                              const InstanceMap& instances);

/// Arithmetic mean of the channel vectors at `pixels`; not renormalized.
std::vector<double> mean_embedding(const FieldGrid& grid,
                                   std::span<const int> pixels);

struct Violation {
  std::string message;
};

/// Structural checks for a labeled scene: shapes agree, labels are catalog
/// classes or void, instance pixels lie on thing classes, each instance id
/// maps to one class. Returns an empty list when everything holds.
std::vector<Violation> validate(const LabelMap& labels,
                                const InstanceMap& instances,
                                const ClassCatalog& catalog);

/// Ground truth (labels, instances) -> PanopticMap using the id codec.
/// Thing pixels take encode(class, instance_id); stuff pixels take
/// encode(class, 0); void labels and thing pixels without an instance id
/// become void. Segment table rows are ordered by segment id.
PanopticMap panoptic_from_truth(const LabelMap& labels,
                                const InstanceMap& instances,
                                const ClassCatalog& catalog);

/// Per-pixel semantic classes implied by a panoptic map (void where
/// unassigned). Useful for semantic-only metrics.
LabelMap semantic_from_panoptic(const PanopticMap& pan);

}  // namespace hle
