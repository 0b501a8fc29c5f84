#include "hle/grid.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

namespace hle {

ClassCatalog::ClassCatalog(std::vector<ClassInfo> classes)
    : classes_(std::move(classes)) {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i].id != static_cast<std::int32_t>(i))
      throw std::invalid_argument(
          "ClassCatalog: ids must be contiguous from 0, got id " +
          std::to_string(classes_[i].id) + " at position " +
          std::to_string(i));
    if (classes_[i].id == kVoidClass)
      throw std::invalid_argument(
          "ClassCatalog: id 255 is reserved for void");
  }
}

const ClassInfo& ClassCatalog::at(std::int32_t id) const {
  if (!contains(id))
    throw std::out_of_range("ClassCatalog: unknown class id " +
                            std::to_string(id));
  return classes_[static_cast<std::size_t>(id)];
}

int ClassCatalog::thing_count() const {
  int n = 0;
  for (const auto& c : classes_)
    if (c.kind == ClassKind::Thing) ++n;
  return n;
}

LabelMap LabelMap::filled(int height, int width, std::int32_t value) {
  LabelMap m;
  m.height = height;
  m.width = width;
  m.data.assign(static_cast<std::size_t>(height) * width, value);
  return m;
}

InstanceMap InstanceMap::filled(int height, int width, std::int32_t value) {
  InstanceMap m;
  m.height = height;
  m.width = width;
  m.data.assign(static_cast<std::size_t>(height) * width, value);
  return m;
}

FieldGrid FieldGrid::zeros(int height, int width, int channels) {
  return filled(height, width, channels, 0.0);
}

FieldGrid FieldGrid::filled(int height, int width, int channels,
                            double value) {
  if (height < 0 || width < 0 || channels <= 0)
    throw std::invalid_argument("FieldGrid: bad shape");
  FieldGrid g;
  g.height = height;
  g.width = width;
  g.channels = channels;
  g.data.assign(
      static_cast<std::size_t>(height) * width * channels, value);
  return g;
}

std::int32_t encode_panoptic_id(std::int32_t class_id,
                                std::int32_t instance_index) {
  if (class_id < 0)
    throw std::invalid_argument("encode_panoptic_id: negative class id");
  if (instance_index < 0 || instance_index >= kMaxInstancesPerClass)
    throw std::invalid_argument(
        "encode_panoptic_id: instance index " +
        std::to_string(instance_index) + " outside [0, 1000)");
  const std::int32_t id = class_id * kMaxInstancesPerClass + instance_index;
  if (id == kVoidSegment)
    throw std::invalid_argument(
        "encode_panoptic_id: class 0 / index 0 collides with the void "
        "segment id; order the catalog so class 0 is a thing class");
  return id;
}

std::pair<std::int32_t, std::int32_t> decode_panoptic_id(std::int32_t id) {
  if (id <= 0)
    throw std::invalid_argument("decode_panoptic_id: id must be positive");
  return {id / kMaxInstancesPerClass, id % kMaxInstancesPerClass};
}

std::vector<InstancePixels> extract_instances(const LabelMap& labels,
                                              const InstanceMap& instances) {
  if (labels.height != instances.height || labels.width != instances.width)
    throw std::invalid_argument("extract_instances: shape mismatch");
  std::map<std::int32_t, InstancePixels> by_id;
  const int n = labels.pixels();
  for (int i = 0; i < n; ++i) {
    const std::int32_t id = instances.data[i];
    if (id == 0) continue;
    const std::int32_t cls = labels.data[i];
    auto [it, fresh] = by_id.try_emplace(id);
    if (fresh) {
      it->second.instance_id = id;
      it->second.class_id = cls;
    } else if (it->second.class_id != cls) {
      throw std::invalid_argument(
          "extract_instances: instance " + std::to_string(id) +
          " spans classes " + std::to_string(it->second.class_id) + " and " +
          std::to_string(cls));
    }
    it->second.pixels.push_back(i);
  }
  std::vector<InstancePixels> out;
  out.reserve(by_id.size());
  for (auto& [id, inst] : by_id) {
    if (inst.class_id == kVoidClass)
      throw std::invalid_argument("extract_instances: instance " +
                                  std::to_string(id) + " sits on void labels");
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<double> mean_embedding(const FieldGrid& grid,
                                   std::span<const int> pixels) {
  if (pixels.empty())
    throw std::invalid_argument("mean_embedding: empty pixel list");
  std::vector<double> mean(static_cast<std::size_t>(grid.channels), 0.0);
  for (int idx : pixels) {
    auto v = grid.pixel(idx);
    for (int c = 0; c < grid.channels; ++c) mean[c] += v[c];
  }
  for (double& x : mean) x /= static_cast<double>(pixels.size());
  return mean;
}

std::vector<Violation> validate(const LabelMap& labels,
                                const InstanceMap& instances,
                                const ClassCatalog& catalog) {
  std::vector<Violation> out;
  if (labels.height != instances.height || labels.width != instances.width) {
    out.push_back({"label map " + std::to_string(labels.height) + "x" +
                   std::to_string(labels.width) + " and instance map " +
                   std::to_string(instances.height) + "x" +
                   std::to_string(instances.width) + " shapes differ"});
    return out;  // pixelwise checks below assume equal shapes
  }
  if (static_cast<int>(labels.data.size()) != labels.pixels())
    out.push_back({"label map data size does not match height*width"});
  if (static_cast<int>(instances.data.size()) != instances.pixels())
    out.push_back({"instance map data size does not match height*width"});
  if (!out.empty()) return out;

  std::map<std::int32_t, std::int32_t> instance_class;
  const int n = labels.pixels();
  for (int i = 0; i < n; ++i) {
    const std::int32_t cls = labels.data[i];
    const std::int32_t inst = instances.data[i];
    if (cls != kVoidClass && !catalog.contains(cls)) {
      out.push_back({"pixel " + std::to_string(i) + ": label " +
                     std::to_string(cls) + " is not in the catalog"});
      continue;
    }
    if (inst < 0) {
      out.push_back({"pixel " + std::to_string(i) + ": negative instance id " +
                     std::to_string(inst)});
      continue;
    }
    if (inst > 0) {
      if (cls != kVoidClass && catalog.is_stuff(cls))
        out.push_back({"pixel " + std::to_string(i) + ": instance id " +
                       std::to_string(inst) + " on stuff class " +
                       std::to_string(cls)});
      if (cls == kVoidClass)
        out.push_back({"pixel " + std::to_string(i) + ": instance id " +
                       std::to_string(inst) + " on a void label"});
      auto [it, fresh] = instance_class.try_emplace(inst, cls);
      if (!fresh && it->second != cls)
        out.push_back({"instance " + std::to_string(inst) +
                       " spans classes " + std::to_string(it->second) +
                       " and " + std::to_string(cls)});
    }
  }
  return out;
}

PanopticMap panoptic_from_truth(const LabelMap& labels,
                                const InstanceMap& instances,
                                const ClassCatalog& catalog) {
  if (labels.height != instances.height || labels.width != instances.width)
    throw std::invalid_argument("panoptic_from_truth: shape mismatch");
  PanopticMap pan;
  pan.height = labels.height;
  pan.width = labels.width;
  pan.data.assign(static_cast<std::size_t>(pan.pixels()), kVoidSegment);
  std::map<std::int32_t, SegmentInfo> table;
  const int n = labels.pixels();
  for (int i = 0; i < n; ++i) {
    const std::int32_t cls = labels.data[i];
    if (cls == kVoidClass) continue;
    if (!catalog.contains(cls))
      throw std::invalid_argument("panoptic_from_truth: label " +
                                  std::to_string(cls) +
                                  " is not in the catalog");
    const bool thing = catalog.is_thing(cls);
    std::int32_t seg;
    if (thing) {
      const std::int32_t inst = instances.data[i];
      if (inst == 0) continue;  // crowd-like thing pixel: stays void
      seg = encode_panoptic_id(cls, inst);
    } else {
      seg = encode_panoptic_id(cls, 0);
    }
    pan.data[i] = seg;
    table.try_emplace(seg, SegmentInfo{seg, cls, thing});
  }
  pan.segments.reserve(table.size());
  for (const auto& [id, info] : table) pan.segments.push_back(info);
  return pan;
}

LabelMap semantic_from_panoptic(const PanopticMap& pan) {
  std::map<std::int32_t, std::int32_t> cls_of;
  for (const auto& s : pan.segments) cls_of[s.id] = s.class_id;
  LabelMap out = LabelMap::filled(pan.height, pan.width, kVoidClass);
  const int n = pan.pixels();
  for (int i = 0; i < n; ++i) {
    const std::int32_t seg = pan.data[i];
    if (seg == kVoidSegment) continue;
    auto it = cls_of.find(seg);
    if (it == cls_of.end())
      throw std::invalid_argument(
          "semantic_from_panoptic: raster id " + std::to_string(seg) +
          " missing from the segment table");
    out.data[i] = it->second;
  }
  return out;
}

}  // namespace hle
