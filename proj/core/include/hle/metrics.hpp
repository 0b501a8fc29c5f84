#pragma once

// Panoptic evaluation: PQ (strict 0.5-overlap matching), the stuff-relaxed
// PQ variant, parsing covering, semantic mIoU and mask AP. Ground-truth
// void pixels never count against a prediction: they are removed from match
// unions, and predictions mostly covered by void are not false positives.

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "hle/grid.hpp"

namespace hle {

struct ClassPqStat {
  double iou_sum = 0.0;
  int tp = 0, fp = 0, fn = 0;

  bool counted() const { return tp + fp + fn > 0; }
  double pq() const {
    return counted() ? iou_sum / (tp + 0.5 * fp + 0.5 * fn) : 0.0;
  }
};

struct PqResult {
  std::map<std::int32_t, ClassPqStat> per_class;
  double pq_all = 0.0, pq_things = 0.0, pq_stuff = 0.0;
  // classes with any tp/fp/fn, i.e. those entering each mean
  int counted_all = 0, counted_things = 0, counted_stuff = 0;
};

/// Pixel-set IoU of two sorted, duplicate-free index lists.
double mask_iou(std::span<const int> a, std::span<const int> b);

/// Panoptic quality: segments match when same-class IoU exceeds 0.5 (strict),
/// which makes matches unique (asserted). Per-class PQ = sum of matched IoUs
/// over (TP + FP/2 + FN/2); the headline numbers average over classes that
/// appear at all.
PqResult panoptic_quality(const PanopticMap& pred, const PanopticMap& gt,
                          const ClassCatalog& catalog);

/// PQ with the stuff rule relaxed to IoU > 0 (best-IoU unique matching);
/// thing classes keep the strict rule.
PqResult pq_dagger(const PanopticMap& pred, const PanopticMap& gt,
                   const ClassCatalog& catalog);

struct PcResult {
  double value = 0.0;
  bool undefined = false;  // no ground-truth regions at all
};

/// Parsing covering: per class, the size-weighted mean over ground-truth
/// regions of the best same-class prediction IoU; averaged over classes with
/// ground truth.
PcResult parsing_covering(const PanopticMap& pred, const PanopticMap& gt,
                          const ClassCatalog& catalog);

/// Semantic mean IoU over classes present in the ground truth; gt-void
/// pixels are ignored on both sides. No present classes -> 0.
double mean_iou(const LabelMap& pred, const LabelMap& gt,
                const ClassCatalog& catalog);

struct ScoredInstance {
  std::vector<int> pixels;  // sorted ascending
  std::int32_t class_id = 0;
  double score = 0.0;
};

/// The ten COCO-style overlap thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> ap_iou_thresholds();

/// Mask AP: per threshold, predictions are taken in descending score order
/// and greedily matched to the best remaining same-class ground truth at
/// IoU >= threshold; precision is interpolated (running max from the right)
/// and read at the 101 recall levels {0, 0.01, ..., 1.00}. Result is the
/// mean over thresholds. No ground truth -> 0.
double average_precision(std::vector<ScoredInstance> preds,
                         const std::vector<ScoredInstance>& gts,
                         std::span<const double> iou_thresholds);

}  // namespace hle
