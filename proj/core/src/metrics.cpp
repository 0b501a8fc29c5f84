#include "hle/metrics.hpp"

#include <algorithm>
#include <cassert>
#include <set>
#include <stdexcept>
#include <string>

namespace hle {

namespace {

struct Segment {
  SegmentInfo info;
  int area = 0;
  int void_overlap = 0;  // pixels sitting on ground-truth void (preds only)
};

struct Overlap {
  std::int32_t pred = 0, gt = 0;
  int inter = 0;
};

/// Per-image match bookkeeping shared by PQ, its stuff-relaxed variant and
/// parsing covering.
struct MatchTable {
  std::map<std::int32_t, Segment> pred, gt;
  std::vector<Overlap> overlaps;  // same-class, inter > 0, deterministic order
};

std::map<std::int32_t, Segment> index_segments(const PanopticMap& pan,
                                               const ClassCatalog& catalog,
                                               const char* who) {
  std::map<std::int32_t, Segment> out;
  for (const auto& s : pan.segments) {
    if (!catalog.contains(s.class_id))
      throw std::invalid_argument(std::string(who) + ": segment class " +
                                  std::to_string(s.class_id) +
                                  " is not in the catalog");
    if (!out.try_emplace(s.id, Segment{s, 0, 0}).second)
      throw std::invalid_argument(std::string(who) + ": duplicate segment id " +
                                  std::to_string(s.id));
  }
  return out;
}

MatchTable build_match_table(const PanopticMap& pred, const PanopticMap& gt,
                             const ClassCatalog& catalog) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("metrics: map shapes differ");
  MatchTable t;
  t.pred = index_segments(pred, catalog, "metrics (pred)");
  t.gt = index_segments(gt, catalog, "metrics (gt)");

  std::map<std::pair<std::int32_t, std::int32_t>, int> inter;
  const int n = pred.pixels();
  for (int i = 0; i < n; ++i) {
    const std::int32_t p = pred.data[static_cast<std::size_t>(i)];
    const std::int32_t g = gt.data[static_cast<std::size_t>(i)];
    if (p != kVoidSegment) {
      auto it = t.pred.find(p);
      if (it == t.pred.end())
        throw std::invalid_argument(
            "metrics: predicted raster id " + std::to_string(p) +
            " missing from the segment table");
      ++it->second.area;
      if (g == kVoidSegment) ++it->second.void_overlap;
    }
    if (g != kVoidSegment) {
      auto it = t.gt.find(g);
      if (it == t.gt.end())
        throw std::invalid_argument(
            "metrics: ground-truth raster id " + std::to_string(g) +
            " missing from the segment table");
      ++it->second.area;
    }
    if (p != kVoidSegment && g != kVoidSegment) ++inter[{p, g}];
  }
  for (const auto& [key, count] : inter) {
    const Segment& ps = t.pred.at(key.first);
    const Segment& gs = t.gt.at(key.second);
    if (ps.info.class_id != gs.info.class_id) continue;
    t.overlaps.push_back({key.first, key.second, count});
  }
  return t;
}

/// IoU with gt-void removed from the union: the prediction is not punished
/// for covering unlabeled ground truth.
double overlap_iou(const Segment& pred, const Segment& gt, int inter) {
  const int uni = pred.area + gt.area - inter - pred.void_overlap;
  assert(uni > 0);
  return static_cast<double>(inter) / static_cast<double>(uni);
}

void finalize_means(PqResult& r, const ClassCatalog& catalog) {
  double sum_all = 0.0, sum_things = 0.0, sum_stuff = 0.0;
  for (const auto& [cls, stat] : r.per_class) {
    if (!stat.counted()) continue;
    const double pq = stat.pq();
    sum_all += pq;
    ++r.counted_all;
    if (catalog.is_thing(cls)) {
      sum_things += pq;
      ++r.counted_things;
    } else {
      sum_stuff += pq;
      ++r.counted_stuff;
    }
  }
  r.pq_all = r.counted_all ? sum_all / r.counted_all : 0.0;
  r.pq_things = r.counted_things ? sum_things / r.counted_things : 0.0;
  r.pq_stuff = r.counted_stuff ? sum_stuff / r.counted_stuff : 0.0;
}

PqResult pq_impl(const PanopticMap& pred, const PanopticMap& gt,
                 const ClassCatalog& catalog, bool relaxed_stuff) {
  MatchTable t = build_match_table(pred, gt, catalog);
  PqResult r;
  for (const auto& c : catalog.classes()) r.per_class[c.id];  // zero rows

  std::set<std::int32_t> matched_pred, matched_gt;
  // Strict pass: IoU > 0.5 guarantees uniqueness (two segments cannot each
  // cover most of the same partner), asserted below.
  for (const auto& o : t.overlaps) {
    const Segment& ps = t.pred.at(o.pred);
    const Segment& gs = t.gt.at(o.gt);
    if (relaxed_stuff && !catalog.is_thing(ps.info.class_id))
      continue;  // handled by the relaxed pass
    const double iou = overlap_iou(ps, gs, o.inter);
    if (iou > 0.5) {
      const bool p_new = matched_pred.insert(o.pred).second;
      const bool g_new = matched_gt.insert(o.gt).second;
      if (!p_new || !g_new)
        throw std::logic_error("PQ: strict matching produced a duplicate");
      auto& stat = r.per_class[ps.info.class_id];
      stat.iou_sum += iou;
      ++stat.tp;
    }
  }
  if (relaxed_stuff) {
    // Stuff: any positive overlap can match, best IoU first, one partner
    // each. Deterministic order: IoU desc, then segment ids.
    std::vector<std::pair<double, const Overlap*>> rows;
    for (const auto& o : t.overlaps) {
      const Segment& ps = t.pred.at(o.pred);
      if (catalog.is_thing(ps.info.class_id)) continue;
      rows.emplace_back(overlap_iou(ps, t.gt.at(o.gt), o.inter), &o);
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) {
                       if (a.first != b.first) return a.first > b.first;
                       if (a.second->pred != b.second->pred)
                         return a.second->pred < b.second->pred;
                       return a.second->gt < b.second->gt;
                     });
    for (const auto& [iou, o] : rows) {
      if (iou <= 0.0) continue;
      if (matched_pred.count(o->pred) || matched_gt.count(o->gt)) continue;
      matched_pred.insert(o->pred);
      matched_gt.insert(o->gt);
      auto& stat = r.per_class[t.pred.at(o->pred).info.class_id];
      stat.iou_sum += iou;
      ++stat.tp;
    }
  }
  for (const auto& [id, seg] : t.pred) {
    if (matched_pred.count(id)) continue;
    // Mostly-void predictions are not penalized (reference behavior).
    if (seg.void_overlap > 0.5 * seg.area) continue;
    ++r.per_class[seg.info.class_id].fp;
  }
  for (const auto& [id, seg] : t.gt) {
    if (matched_gt.count(id)) continue;
    ++r.per_class[seg.info.class_id].fn;
  }
  finalize_means(r, catalog);
  return r;
}

}  // namespace

double mask_iou(std::span<const int> a, std::span<const int> b) {
  std::size_t i = 0, j = 0;
  long long inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const long long uni =
      static_cast<long long>(a.size()) + static_cast<long long>(b.size()) -
      inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

PqResult panoptic_quality(const PanopticMap& pred, const PanopticMap& gt,
                          const ClassCatalog& catalog) {
  return pq_impl(pred, gt, catalog, /*relaxed_stuff=*/false);
}

PqResult pq_dagger(const PanopticMap& pred, const PanopticMap& gt,
                   const ClassCatalog& catalog) {
  return pq_impl(pred, gt, catalog, /*relaxed_stuff=*/true);
}

PcResult parsing_covering(const PanopticMap& pred, const PanopticMap& gt,
                          const ClassCatalog& catalog) {
  MatchTable t = build_match_table(pred, gt, catalog);
  // best same-class IoU per gt segment
  std::map<std::int32_t, double> best;
  for (const auto& o : t.overlaps) {
    const double iou = overlap_iou(t.pred.at(o.pred), t.gt.at(o.gt), o.inter);
    auto [it, _] = best.try_emplace(o.gt, 0.0);
    it->second = std::max(it->second, iou);
  }
  std::map<std::int32_t, std::pair<long long, double>> per_class;  // area, cover
  for (const auto& [id, seg] : t.gt) {
    auto& [area, cover] = per_class[seg.info.class_id];
    area += seg.area;
    const auto it = best.find(id);
    cover += static_cast<double>(seg.area) * (it != best.end() ? it->second : 0.0);
  }
  PcResult r;
  if (per_class.empty()) {
    r.undefined = true;
    return r;
  }
  double sum = 0.0;
  for (const auto& [cls, ac] : per_class)
    sum += ac.second / static_cast<double>(ac.first);
  r.value = sum / static_cast<double>(per_class.size());
  return r;
}

double mean_iou(const LabelMap& pred, const LabelMap& gt,
                const ClassCatalog& catalog) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("mean_iou: shape mismatch");
  const int C = catalog.size();
  std::vector<long long> inter(static_cast<std::size_t>(C), 0);
  std::vector<long long> uni(static_cast<std::size_t>(C), 0);
  std::vector<long long> gt_count(static_cast<std::size_t>(C), 0);
  const int n = pred.pixels();
  for (int i = 0; i < n; ++i) {
    const std::int32_t g = gt.data[static_cast<std::size_t>(i)];
    if (g == kVoidClass) continue;  // unlabeled: ignored on both sides
    const std::int32_t p = pred.data[static_cast<std::size_t>(i)];
    if (!catalog.contains(g))
      throw std::invalid_argument("mean_iou: gt label " + std::to_string(g) +
                                  " is not in the catalog");
    ++gt_count[static_cast<std::size_t>(g)];
    if (p == g) {
      ++inter[static_cast<std::size_t>(g)];
      ++uni[static_cast<std::size_t>(g)];
    } else {
      ++uni[static_cast<std::size_t>(g)];
      if (p >= 0 && p < C) ++uni[static_cast<std::size_t>(p)];
    }
  }
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < C; ++c) {
    if (gt_count[static_cast<std::size_t>(c)] == 0) continue;
    sum += uni[static_cast<std::size_t>(c)] == 0
               ? 0.0
               : static_cast<double>(inter[static_cast<std::size_t>(c)]) /
                     static_cast<double>(uni[static_cast<std::size_t>(c)]);
    ++counted;
  }
  return counted ? sum / counted : 0.0;
}

std::vector<double> ap_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

double average_precision(std::vector<ScoredInstance> preds,
                         const std::vector<ScoredInstance>& gts,
                         std::span<const double> iou_thresholds) {
  if (iou_thresholds.empty())
    throw std::invalid_argument("average_precision: no thresholds");
  if (gts.empty()) return 0.0;
  std::stable_sort(preds.begin(), preds.end(),
                   [](const ScoredInstance& a, const ScoredInstance& b) {
                     return a.score > b.score;
                   });
  const int G = static_cast<int>(gts.size());
  double ap_sum = 0.0;
  std::vector<char> used(gts.size());
  std::vector<char> is_tp(preds.size());
  for (const double tau : iou_thresholds) {
    std::fill(used.begin(), used.end(), 0);
    std::fill(is_tp.begin(), is_tp.end(), 0);
    for (std::size_t k = 0; k < preds.size(); ++k) {
      double best = 0.0;
      int best_g = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g] || gts[g].class_id != preds[k].class_id) continue;
        const double iou = mask_iou(preds[k].pixels, gts[g].pixels);
        if (iou > best) {
          best = iou;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g >= 0 && best >= tau) {
        used[static_cast<std::size_t>(best_g)] = 1;
        is_tp[k] = 1;
      }
    }
    // precision at each rank, then running max from the right
    std::vector<double> precision(preds.size()), recall(preds.size());
    int tp = 0;
    for (std::size_t k = 0; k < preds.size(); ++k) {
      tp += is_tp[k];
      precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
      recall[k] = static_cast<double>(tp) / static_cast<double>(G);
    }
    for (std::size_t k = preds.size(); k-- > 1;)
      precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double sum = 0.0;
    for (int level = 0; level <= 100; ++level) {
      const double r = level / 100.0;
      // first rank reaching recall r; precision there is already the
      // right-side running max
      double p = 0.0;
      for (std::size_t k = 0; k < preds.size(); ++k) {
        if (recall[k] >= r - 1e-12) {
          p = precision[k];
          break;
        }
      }
      sum += p;
    }
    ap_sum += sum / 101.0;
  }
  return ap_sum / static_cast<double>(iou_thresholds.size());
}

}  // namespace hle
