#include "hle/decoder.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

#include "hle/numeric.hpp"

namespace hle {

namespace {

void check_decoder_config(const DecoderConfig& c) {
  const int f = c.downsample_factor;
  if (f != 1 && f != 2 && f != 4 && f != 8)
    throw std::invalid_argument(
        "decoder: downsample_factor must be 1, 2, 4 or 8");
  if (c.min_stuff_area < 0)
    throw std::invalid_argument("decoder: min_stuff_area < 0");
}

SeedCandidate make_candidate(const PixelFields& fields,
                             const EmbeddingLayout& layout,
                             const LabelMap& semantic, int pixel) {
  SeedCandidate c;
  c.pixel = pixel;
  c.score = fields.seed.data[static_cast<std::size_t>(pixel)];
  c.class_id = semantic.data[static_cast<std::size_t>(pixel)];
  const auto e = layout.ins(fields.e.pixel(pixel));
  c.embedding.assign(e.begin(), e.end());
  c.rho = pixel_position(pixel / fields.width(), pixel % fields.width(),
                         fields.height(), fields.width());
  c.sigma = fields.sigma.data[static_cast<std::size_t>(pixel)];
  c.sigma_spatial = fields.sigma_spatial.data[static_cast<std::size_t>(pixel)];
  return c;
}

}  // namespace

LabelMap semantic_argmax(const PixelFields& fields, const SemanticState& state,
                         const EmbeddingLayout& layout) {
  if (state.dim != layout.sem_dim())
    throw std::invalid_argument(
        "semantic_argmax: anchor width does not match the layout");
  LabelMap out = LabelMap::filled(fields.height(), fields.width(), 0);
  const int C = state.num_classes;
  std::vector<double> inv_2s2(static_cast<std::size_t>(C));
  for (int k = 0; k < C; ++k) {
    const double s = state.sigma[static_cast<std::size_t>(k)];
    if (s <= 0.0) throw std::invalid_argument("semantic_argmax: sigma <= 0");
    inv_2s2[static_cast<std::size_t>(k)] = 1.0 / (2.0 * s * s);
  }
  for (int i = 0; i < fields.pixels(); ++i) {
    const auto e = layout.sem(fields.e.pixel(i));
    // psi shares its ordering with the logits, so the softmax is skipped
    int best = 0;
    double best_logit = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < C; ++k) {
      const double a = -cosine_distance(e, state.row(k)) *
                       inv_2s2[static_cast<std::size_t>(k)];
      if (a > best_logit) {
        best_logit = a;
        best = k;
      }
    }
    out.data[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

std::vector<int> seed_nms(const FieldGrid& seed) {
  if (seed.channels != 1)
    throw std::invalid_argument("seed_nms: expected a 1-channel grid");
  const int H = seed.height, W = seed.width;
  std::vector<int> out;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const double v = seed.at(r, c, 0);
      const int r0 = std::max(0, r - 1), r1 = std::min(H - 1, r + 1);
      const int c0 = std::max(0, c - 1), c1 = std::min(W - 1, c + 1);
      double best = -std::numeric_limits<double>::infinity();
      int first_attainer = -1;
      for (int rr = r0; rr <= r1; ++rr)
        for (int cc = c0; cc <= c1; ++cc) {
          const double w = seed.at(rr, cc, 0);
          if (w > best) {
            best = w;
            first_attainer = rr * W + cc;
          }
        }
      if (v == best && first_attainer == r * W + c) out.push_back(r * W + c);
    }
  }
  return out;
}

double pair_affinity(const SeedCandidate& a, std::span<const double> e_ins_b,
                     std::array<double, 2> rho_b) {
  return phi_kernel(e_ins_b, rho_b, a.embedding, a.rho, a.sigma,
                    a.sigma_spatial);
}

std::vector<SeedCandidate> merge_seeds(std::vector<SeedCandidate> candidates,
                                       const DecoderConfig& config) {
  // Descending score; stable keeps ties in ascending pixel order as long as
  // the input is (seed_nms emits ascending).
  std::stable_sort(
      candidates.begin(), candidates.end(),
      [](const SeedCandidate& a, const SeedCandidate& b) {
        return a.score > b.score;
      });
  std::vector<SeedCandidate> accepted;
  for (auto& cand : candidates) {
    bool absorbed = false;
    for (const auto& a : accepted) {
      if (pair_affinity(a, cand.embedding, cand.rho) >=
          config.merge_threshold) {
        absorbed = true;
        break;
      }
    }
    if (!absorbed) accepted.push_back(std::move(cand));
  }
  return accepted;
}

PanopticMap assign_masks(std::span<const SeedCandidate> survivors,
                         const PixelFields& fields,
                         const LabelMap& /*semantic*/,
                         const EmbeddingLayout& layout,
                         const ClassCatalog& catalog,
                         const DecoderConfig& config) {
  // The semantic map already fixed each seed's class; pixel argmaxes do not
  // veto a claim, so it goes unread here.
  PanopticMap pan;
  pan.height = fields.height();
  pan.width = fields.width();
  pan.data.assign(static_cast<std::size_t>(pan.pixels()), kVoidSegment);

  // Segment ids: per-class instance counters in survivor order.
  std::map<std::int32_t, std::int32_t> next_index;
  std::vector<std::int32_t> seg_ids(survivors.size());
  for (std::size_t s = 0; s < survivors.size(); ++s) {
    const std::int32_t cls = survivors[s].class_id;
    if (!catalog.contains(cls))
      throw std::invalid_argument("assign_masks: seed class " +
                                  std::to_string(cls) +
                                  " is not in the catalog");
    auto [it, _] = next_index.try_emplace(cls, 1);
    seg_ids[s] = encode_panoptic_id(cls, it->second++);
    pan.segments.push_back(
        {seg_ids[s], cls, catalog.is_thing(cls)});
  }
  if (survivors.empty()) return pan;

  const int W = fields.width();
  for (int i = 0; i < fields.pixels(); ++i) {
    const auto e = layout.ins(fields.e.pixel(i));
    const auto rho =
        pixel_position(i / W, i % W, fields.height(), fields.width());
    double best = -1.0;
    int winner = -1;
    for (std::size_t s = 0; s < survivors.size(); ++s) {
      const double aff = pair_affinity(survivors[s], e, rho);
      if (aff > best) {  // strict: earlier survivor wins ties
        best = aff;
        winner = static_cast<int>(s);
      }
    }
    if (best >= config.mask_threshold)
      pan.data[static_cast<std::size_t>(i)] =
          seg_ids[static_cast<std::size_t>(winner)];
  }
  return pan;
}

void stuff_filter(PanopticMap& pan, const LabelMap& semantic,
                  const PixelFields& fields, const SemanticState& state,
                  const EmbeddingLayout& layout, const ClassCatalog& catalog,
                  const DecoderConfig& config) {
  const int n = pan.pixels();
  if (semantic.pixels() != n)
    throw std::invalid_argument("stuff_filter: shape mismatch");
  // Gather surviving pixels per stuff class, then emit one segment apiece.
  std::map<std::int32_t, std::vector<int>> by_class;
  for (int i = 0; i < n; ++i) {
    if (pan.data[static_cast<std::size_t>(i)] != kVoidSegment) continue;
    const std::int32_t cls = semantic.data[static_cast<std::size_t>(i)];
    if (!catalog.is_stuff(cls)) continue;  // unclaimed thing argmax: stays void
    const std::vector<double> psi =
        psi_scores(layout.sem(fields.e.pixel(i)), state);
    if (psi[static_cast<std::size_t>(cls)] < config.stuff_threshold) continue;
    by_class[cls].push_back(i);
  }
  for (const auto& [cls, pixels] : by_class) {
    if (static_cast<int>(pixels.size()) < config.min_stuff_area) continue;
    const std::int32_t seg = encode_panoptic_id(cls, 0);
    for (int i : pixels) pan.data[static_cast<std::size_t>(i)] = seg;
    pan.segments.push_back({seg, cls, false});
  }
}

PanopticMap decode(const PixelFields& fields, const SemanticState& state,
                   const ClassCatalog& catalog, const DecoderConfig& config) {
  check_decoder_config(config);
  if (state.num_classes != catalog.size())
    throw std::invalid_argument(
        "decode: semantic state and catalog disagree on the class count");
  const EmbeddingLayout layout = infer_layout(fields.dim(), state.dim);

  const LabelMap semantic = semantic_argmax(fields, state, layout);
  std::vector<SeedCandidate> candidates;
  for (int px : seed_nms(fields.seed)) {
    if (fields.seed.data[static_cast<std::size_t>(px)] <
        config.seed_threshold)
      continue;
    SeedCandidate c = make_candidate(fields, layout, semantic, px);
    if (config.things_only_seeds && catalog.is_stuff(c.class_id)) continue;
    candidates.push_back(std::move(c));
  }
  const std::vector<SeedCandidate> survivors =
      merge_seeds(std::move(candidates), config);
  PanopticMap pan =
      assign_masks(survivors, fields, semantic, layout, catalog, config);
  stuff_filter(pan, semantic, fields, state, layout, catalog, config);
  return pan;
}

PanopticMap decode_downsampled(const PixelFields& fields,
                               const SemanticState& state,
                               const ClassCatalog& catalog,
                               const DecoderConfig& config) {
  check_decoder_config(config);
  const int f = config.downsample_factor;
  if (f == 1) return decode(fields, state, catalog, config);

  const int H = fields.height(), W = fields.width();
  const int Hl = (H + f - 1) / f, Wl = (W + f - 1) / f;
  PixelFields low;
  low.e = FieldGrid::zeros(Hl, Wl, fields.dim());
  low.sigma = FieldGrid::zeros(Hl, Wl, 1);
  low.sigma_spatial = FieldGrid::zeros(Hl, Wl, 1);
  low.seed = FieldGrid::zeros(Hl, Wl, 1);
  for (int r = 0; r < Hl; ++r) {
    for (int c = 0; c < Wl; ++c) {
      const int src = (r * f) * W + (c * f);  // top-left of the block
      const int dst = r * Wl + c;
      auto se = fields.e.pixel(src);
      auto de = low.e.pixel(dst);
      std::copy(se.begin(), se.end(), de.begin());
      low.sigma.data[static_cast<std::size_t>(dst)] =
          fields.sigma.data[static_cast<std::size_t>(src)];
      low.sigma_spatial.data[static_cast<std::size_t>(dst)] =
          fields.sigma_spatial.data[static_cast<std::size_t>(src)];
      low.seed.data[static_cast<std::size_t>(dst)] =
          fields.seed.data[static_cast<std::size_t>(src)];
    }
  }
  DecoderConfig low_config = config;
  low_config.downsample_factor = 1;
  const PanopticMap coarse = decode(low, state, catalog, low_config);

  PanopticMap pan;
  pan.height = H;
  pan.width = W;
  pan.data.resize(static_cast<std::size_t>(H) * W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      pan.data[static_cast<std::size_t>(r) * W + c] =
          coarse.data[static_cast<std::size_t>(r / f) * Wl + (c / f)];
  pan.segments = coarse.segments;
  return pan;
}

}  // namespace hle
