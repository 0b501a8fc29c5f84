#include "hle/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "hle/numeric.hpp"
#include "hle/thomson.hpp"

namespace hle {

namespace {

void check_spec(const SceneSpec& spec) {
  if (spec.height <= 0 || spec.width <= 0)
    throw std::invalid_argument("generate: image must be non-empty");
  if (spec.bands.empty())
    throw std::invalid_argument("generate: at least one stuff band required");
  double total = 0.0;
  for (const auto& b : spec.bands) {
    if (b.fraction <= 0.0)
      throw std::invalid_argument("generate: band fractions must be positive");
    if (!spec.catalog.contains(b.class_id) ||
        !spec.catalog.is_stuff(b.class_id))
      throw std::invalid_argument("generate: band class " +
                                  std::to_string(b.class_id) +
                                  " must be a stuff class in the catalog");
    total += b.fraction;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("generate: band fractions must sum to 1");
  for (const auto& t : spec.things) {
    if (!spec.catalog.contains(t.class_id) ||
        !spec.catalog.is_thing(t.class_id))
      throw std::invalid_argument("generate: thing class " +
                                  std::to_string(t.class_id) +
                                  " must be a thing class in the catalog");
    if (t.count_min < 0 || t.count_max < t.count_min)
      throw std::invalid_argument("generate: bad count range");
    if (t.size_min <= 0.0 || t.size_max < t.size_min || t.size_max > 0.5)
      throw std::invalid_argument(
          "generate: sizes must satisfy 0 < min <= max <= 0.5");
  }
}

}  // namespace

Scene generate(const SceneSpec& spec) {
  check_spec(spec);
  const int H = spec.height, W = spec.width;
  Scene scene;
  scene.catalog = spec.catalog;
  scene.labels = LabelMap::filled(H, W, kVoidClass);
  scene.instances = InstanceMap::filled(H, W, 0);

  // Stuff bands, top to bottom; row ranges from rounded cumulative heights.
  double cum = 0.0;
  int row = 0;
  for (std::size_t b = 0; b < spec.bands.size(); ++b) {
    cum += spec.bands[b].fraction;
    int end = static_cast<int>(std::lround(cum * H));
    if (b + 1 == spec.bands.size()) end = H;
    for (; row < end; ++row)
      for (int c = 0; c < W; ++c) scene.labels.at(row, c) = spec.bands[b].class_id;
  }

  SplitMix64 rng(spec.rng_seed);
  const double unit = static_cast<double>(std::min(H, W));
  std::int32_t next_id = 1;
  for (const auto& t : spec.things) {
    const int count =
        t.count_min +
        static_cast<int>(rng.next_below(
            static_cast<std::uint64_t>(t.count_max - t.count_min + 1)));
    for (int k = 0; k < count; ++k) {
      const double cy = rng.next_uniform(0.0, H);
      const double cx = rng.next_uniform(0.0, W);
      if (t.shape == ShapeKind::Disc) {
        const double radius = rng.next_uniform(t.size_min, t.size_max) * unit;
        const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
        const int r1 =
            std::min(H - 1, static_cast<int>(std::ceil(cy + radius)));
        const int c0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
        const int c1 =
            std::min(W - 1, static_cast<int>(std::ceil(cx + radius)));
        for (int r = r0; r <= r1; ++r)
          for (int c = c0; c <= c1; ++c) {
            const double dy = r + 0.5 - cy, dx = c + 0.5 - cx;
            if (dy * dy + dx * dx <= radius * radius) {
              scene.labels.at(r, c) = t.class_id;
              scene.instances.at(r, c) = next_id;
            }
          }
      } else {
        const double sy = rng.next_uniform(t.size_min, t.size_max) * unit;
        const double sx = rng.next_uniform(t.size_min, t.size_max) * unit;
        const int r0 = std::max(0, static_cast<int>(std::floor(cy - sy)));
        const int r1 = std::min(H - 1, static_cast<int>(std::ceil(cy + sy)));
        const int c0 = std::max(0, static_cast<int>(std::floor(cx - sx)));
        const int c1 = std::min(W - 1, static_cast<int>(std::ceil(cx + sx)));
        for (int r = r0; r <= r1; ++r)
          for (int c = c0; c <= c1; ++c)
            if (std::abs(r + 0.5 - cy) <= sy && std::abs(c + 0.5 - cx) <= sx) {
              scene.labels.at(r, c) = t.class_id;
              scene.instances.at(r, c) = next_id;
            }
      }
      ++next_id;
    }
  }

  // Occlusion can erase an instance entirely; renumber the survivors densely.
  std::map<std::int32_t, std::int32_t> remap;
  for (std::int32_t id : scene.instances.data)
    if (id != 0) remap.try_emplace(id, 0);
  std::int32_t dense = 1;
  for (auto& [id, fresh] : remap) fresh = dense++;
  for (std::int32_t& id : scene.instances.data)
    if (id != 0) id = remap.at(id);
  return scene;
}

std::vector<std::pair<std::string, SceneSpec>> standard_suite() {
  std::vector<std::pair<std::string, SceneSpec>> out;
  {
    SceneSpec s;
    s.height = 32;
    s.width = 48;
    s.catalog = ClassCatalog({{0, "disc", ClassKind::Thing},
                              {1, "upper", ClassKind::Stuff},
                              {2, "lower", ClassKind::Stuff}});
    s.bands = {{1, 0.5}, {2, 0.5}};
    s.things = {{0, 2, 2, ShapeKind::Disc, 0.10, 0.16}};
    s.rng_seed = 101;
    out.emplace_back("tiny", std::move(s));
  }
  {
    SceneSpec s;
    s.height = 64;
    s.width = 96;
    s.catalog = ClassCatalog({{0, "box", ClassKind::Thing},
                              {1, "disc", ClassKind::Thing},
                              {2, "sky", ClassKind::Stuff},
                              {3, "field", ClassKind::Stuff},
                              {4, "road", ClassKind::Stuff}});
    s.bands = {{2, 0.30}, {3, 0.40}, {4, 0.30}};
    s.things = {{0, 3, 3, ShapeKind::Rectangle, 0.09, 0.14},
                {1, 2, 2, ShapeKind::Disc, 0.09, 0.14}};
    s.rng_seed = 202;
    out.emplace_back("small", std::move(s));
  }
  {
    SceneSpec s;
    s.height = 64;
    s.width = 96;
    s.catalog = ClassCatalog({{0, "disc", ClassKind::Thing},
                              {1, "upper", ClassKind::Stuff},
                              {2, "lower", ClassKind::Stuff}});
    s.bands = {{1, 0.5}, {2, 0.5}};
    s.things = {{0, 4, 4, ShapeKind::Disc, 0.16, 0.22}};
    s.rng_seed = 303;
    out.emplace_back("occluded", std::move(s));
  }
  {
    SceneSpec s;
    s.height = 96;
    s.width = 128;
    s.catalog = ClassCatalog({{0, "disc", ClassKind::Thing},
                              {1, "box", ClassKind::Thing},
                              {2, "sky", ClassKind::Stuff},
                              {3, "field", ClassKind::Stuff},
                              {4, "road", ClassKind::Stuff}});
    s.bands = {{2, 0.34}, {3, 0.33}, {4, 0.33}};
    s.things = {{0, 6, 6, ShapeKind::Disc, 0.07, 0.11},
                {1, 6, 6, ShapeKind::Rectangle, 0.07, 0.11}};
    s.rng_seed = 404;
    out.emplace_back("dense", std::move(s));
  }
  return out;
}

namespace {

/// Two deterministic unit vectors orthogonal to mu (and each other), built
/// from the standard basis by Gram-Schmidt.
std::pair<std::vector<double>, std::vector<double>> tangent_pair(
    std::span<const double> mu) {
  const int d = static_cast<int>(mu.size());
  std::vector<std::vector<double>> basis;
  for (int axis = 0; axis < d && basis.size() < 2; ++axis) {
    std::vector<double> v(static_cast<std::size_t>(d), 0.0);
    v[static_cast<std::size_t>(axis)] = 1.0;
    double p = dot(v, mu);
    for (int c = 0; c < d; ++c) v[static_cast<std::size_t>(c)] -= p * mu[static_cast<std::size_t>(c)];
    for (const auto& prev : basis) {
      p = dot(v, prev);
      for (int c = 0; c < d; ++c)
        v[static_cast<std::size_t>(c)] -= p * prev[static_cast<std::size_t>(c)];
    }
    if (norm(v) < 0.1) continue;  // axis too aligned with mu; try the next
    normalize(v);
    basis.push_back(std::move(v));
  }
  if (basis.size() < 2)
    throw std::logic_error("tangent_pair: could not build a tangent basis");
  return {std::move(basis[0]), std::move(basis[1])};
}

}  // namespace

std::pair<PixelFields, SemanticState> ideal_fields(
    const LabelMap& labels, const InstanceMap& instances,
    const ClassCatalog& catalog, const IdealFieldOptions& options) {
  if (options.dim < 3)
    throw std::invalid_argument("ideal_fields: dim must be at least 3");
  if (catalog.size() < 1)
    throw std::invalid_argument("ideal_fields: empty catalog");
  {
    const auto violations = validate(labels, instances, catalog);
    if (!violations.empty())
      throw std::invalid_argument("ideal_fields: invalid scene: " +
                                  violations.front().message);
  }
  const int H = labels.height, W = labels.width, D = options.dim;
  const int C = catalog.size();

  SemanticState state;
  state.num_classes = C;
  state.dim = D;
  ThomsonConfig tc;
  tc.k = C;
  tc.d = D;
  tc.steps = 2000;
  tc.rng_seed = options.anchor_seed;
  state.mu = thomson_init(tc);
  state.sigma.assign(static_cast<std::size_t>(C), options.sigma_sem);

  // Each instance gets its own direction: the class anchor nudged along a
  // tangent, with same-class instances spread at equal angles so their
  // pairwise cosine distances stay well above the instance bandwidth.
  const std::vector<InstancePixels> insts = extract_instances(labels, instances);
  std::map<std::int32_t, int> class_counts;
  for (const auto& inst : insts) ++class_counts[inst.class_id];
  std::map<std::int32_t, int> class_rank;
  std::map<std::int32_t, std::vector<double>> direction;
  for (const auto& inst : insts) {
    const auto mu = state.row(inst.class_id);
    const auto [t1, t2] = tangent_pair(mu);
    const int rank = class_rank[inst.class_id]++;
    const double theta = 2.0 * std::numbers::pi * rank /
                         static_cast<double>(class_counts[inst.class_id]);
    std::vector<double> dir(static_cast<std::size_t>(D));
    for (int c = 0; c < D; ++c)
      dir[static_cast<std::size_t>(c)] =
          mu[static_cast<std::size_t>(c)] +
          options.instance_offset * (std::cos(theta) * t1[static_cast<std::size_t>(c)] +
                                     std::sin(theta) * t2[static_cast<std::size_t>(c)]);
    normalize(dir);
    direction.emplace(inst.instance_id, std::move(dir));
  }

  PixelFields fields;
  fields.e = FieldGrid::zeros(H, W, D);
  fields.sigma = FieldGrid::filled(H, W, 1, options.sigma_ins);
  fields.sigma_spatial = FieldGrid::filled(H, W, 1, options.sigma_spatial);
  fields.seed = FieldGrid::zeros(H, W, 1);

  for (int i = 0; i < labels.pixels(); ++i) {
    const std::int32_t cls = labels.data[static_cast<std::size_t>(i)];
    const std::int32_t inst = instances.data[static_cast<std::size_t>(i)];
    auto e = fields.e.pixel(i);
    std::span<const double> src;
    if (inst != 0) {
      src = direction.at(inst);
    } else if (cls != kVoidClass) {
      src = state.row(cls);
    } else {
      src = state.row(0);  // unlabeled: any unit vector does
    }
    std::copy(src.begin(), src.end(), e.begin());
  }

  // Seed map: each instance pixel carries its own affinity; stuff stays 0.
  const EmbeddingLayout layout = EmbeddingLayout::full(D);
  for (const auto& inst : insts) {
    const InstanceStats st = instance_stats(fields, inst.pixels, layout);
    for (int idx : inst.pixels) {
      const auto rho = pixel_position(idx / W, idx % W, H, W);
      fields.seed.data[static_cast<std::size_t>(idx)] =
          phi_kernel(fields.e.pixel(idx), rho, st.mu, st.rho, st.sigma,
                     st.sigma_spatial);
    }
  }
  return {std::move(fields), std::move(state)};
}

}  // namespace hle
