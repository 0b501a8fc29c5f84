#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "hle/embed.hpp"
#include "hle/numeric.hpp"
#include "test_util.hpp"

using namespace hle;

namespace {

PixelFields uniform_fields(int h, int w, int dim,
                           std::vector<double> direction, double sigma,
                           double sigma_spatial, double seed) {
  PixelFields f;
  f.e = FieldGrid::zeros(h, w, dim);
  f.sigma = FieldGrid::filled(h, w, 1, sigma);
  f.sigma_spatial = FieldGrid::filled(h, w, 1, sigma_spatial);
  f.seed = FieldGrid::filled(h, w, 1, seed);
  for (int i = 0; i < h * w; ++i)
    for (int d = 0; d < dim; ++d) f.e.pixel(i)[d] = direction[d];
  return f;
}

}  // namespace

TEST_CASE("pixel positions are cell centers in [0,1]^2") {
  auto r = pixel_position(0, 0, 2, 4);
  CHECK(r[0] == doctest::Approx(0.125));
  CHECK(r[1] == doctest::Approx(0.25));
  auto s = pixel_position(1, 3, 2, 4);
  CHECK(s[0] == doctest::Approx(0.875));
  CHECK(s[1] == doctest::Approx(0.75));
}

TEST_CASE("layout construction and inference") {
  auto full = EmbeddingLayout::full(8);
  CHECK(full.sem_dim() == 8);
  CHECK(full.ins_dim() == 8);
  CHECK_FALSE(full.is_split(8));
  auto split = EmbeddingLayout::split(8);
  CHECK(split.sem_dim() == 4);
  CHECK(split.ins_dim() == 4);
  CHECK(split.is_split(8));
  CHECK(split.sem_begin == 0);
  CHECK(split.ins_begin == 4);
  CHECK_THROWS_AS(EmbeddingLayout::split(7), std::invalid_argument);

  CHECK_FALSE(infer_layout(8, 8).is_split(8));
  CHECK(infer_layout(8, 4).is_split(8));
  CHECK_THROWS_AS(infer_layout(8, 3), std::invalid_argument);

  std::vector<double> e{1, 2, 3, 4};
  auto sp = EmbeddingLayout::split(4);
  CHECK(sp.sem(e)[0] == 1);
  CHECK(sp.sem(e).size() == 2);
  CHECK(sp.ins(e)[0] == 3);
}

TEST_CASE("p_kernel hand values") {
  std::vector<double> ex{1.0, 0.0}, ey{0.0, 1.0}, anti{-1.0, 0.0};
  CHECK(p_kernel(ex, ex, 0.3) == 1.0);
  // orthogonal, sigma = sqrt(0.5): exp(-1 / (2 * 0.5)) = exp(-1)
  CHECK(p_kernel(ex, ey, std::sqrt(0.5)) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  // antipodal, sigma = 1: exp(-2 / 2) = exp(-1)
  CHECK(p_kernel(ex, anti, 1.0) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK_THROWS_AS((void)p_kernel(ex, ey, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)p_kernel(ex, ey, -0.1), std::invalid_argument);
}

TEST_CASE("phi_kernel separates into spherical and spatial factors") {
  std::vector<double> ex{1.0, 0.0};
  // same embedding, offset position with |rho - rho_c| = sigma_sp * sqrt(2)
  const double sp = 0.25;
  std::array<double, 2> rc{0.5, 0.5};
  std::array<double, 2> r{0.5 + sp, 0.5 + sp};
  CHECK(phi_kernel(ex, r, ex, rc, 0.3, sp) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(phi_kernel(ex, rc, ex, rc, 0.3, sp) == doctest::Approx(1.0));
  // product structure against the factors computed separately
  std::vector<double> ey{0.0, 1.0};
  const double joint = phi_kernel(ey, r, ex, rc, 0.4, sp);
  const double spherical = p_kernel(ey, ex, 0.4);
  const double spatial = std::exp(-(2.0 * sp * sp) / (2.0 * sp * sp));
  CHECK(joint == doctest::Approx(spherical * spatial).epsilon(1e-12));
  CHECK_THROWS_AS((void)phi_kernel(ex, r, ex, rc, 0.3, 0.0),
                  std::invalid_argument);
}

TEST_CASE("psi hand values and normalization") {
  SemanticState st;
  st.num_classes = 2;
  st.dim = 2;
  st.mu = {1.0, 0.0, 0.0, 1.0};
  st.sigma = {std::sqrt(0.5), std::sqrt(0.5)};
  std::vector<double> e{1.0, 0.0};
  auto psi = psi_scores(e, st);
  REQUIRE(psi.size() == 2);
  const double expect0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  CHECK(psi[0] == doctest::Approx(expect0).epsilon(1e-12));
  CHECK(psi[1] == doctest::Approx(1.0 - expect0).epsilon(1e-12));
  CHECK(psi[0] + psi[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("psi is uniform over equidistant anchors") {
  SemanticState st;
  st.num_classes = 2;
  st.dim = 2;
  st.mu = {0.0, 1.0, 0.0, -1.0};
  st.sigma = {0.4, 0.4};
  std::vector<double> e{1.0, 0.0};
  auto psi = psi_scores(e, st);
  CHECK(psi[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(psi[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("psi survives extreme bandwidths via log-space softmax") {
  SemanticState st;
  st.num_classes = 3;
  st.dim = 2;
  st.mu = {1.0, 0.0, 0.0, 1.0, -1.0, 0.0};
  st.sigma = {1e-3, 1e-3, 1e-3};  // raw kernels underflow to 0
  std::vector<double> e{0.8, 0.6};
  auto psi = psi_scores(e, st);
  double sum = 0.0;
  for (double v : psi) {
    CHECK(std::isfinite(v));
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(psi[0] > 0.999);  // nearest anchor takes everything
}

TEST_CASE("psi sums to one on random draws") {
  SplitMix64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    auto st = test::random_state(rng, 2 + static_cast<int>(rng.next_below(5)),
                                 4);
    auto e = random_unit(rng, 4);
    auto psi = psi_scores(e, st);
    const double sum = std::accumulate(psi.begin(), psi.end(), 0.0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (double v : psi) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("instance_stats pools means without renormalizing") {
  PixelFields f;
  f.e = FieldGrid::zeros(1, 2, 2);
  f.e.pixel(0)[0] = 1.0;
  f.e.pixel(1)[1] = 1.0;
  f.sigma = FieldGrid::zeros(1, 2, 1);
  f.sigma.data = {0.2, 0.4};
  f.sigma_spatial = FieldGrid::zeros(1, 2, 1);
  f.sigma_spatial.data = {0.3, 0.5};
  f.seed = FieldGrid::filled(1, 2, 1, 0.0);
  std::vector<int> pix{0, 1};
  auto st = instance_stats(f, pix, EmbeddingLayout::full(2));
  CHECK(st.mu[0] == doctest::Approx(0.5));
  CHECK(st.mu[1] == doctest::Approx(0.5));  // length sqrt(0.5), untouched
  CHECK(st.sigma == doctest::Approx(0.3));
  CHECK(st.sigma_spatial == doctest::Approx(0.4));
  CHECK(st.rho[0] == doctest::Approx(0.5));   // mean of 0.25 and 0.75
  CHECK(st.rho[1] == doctest::Approx(0.5));
  std::vector<int> none;
  CHECK_THROWS_AS((void)instance_stats(f, none, EmbeddingLayout::full(2)),
                  std::invalid_argument);
}

TEST_CASE("instance_loss equals the mean of per-instance binary losses") {
  SplitMix64 rng(33);
  const int h = 4, w = 5, dim = 4;
  auto fields = test::random_fields(rng, h, w, dim);
  LabelMap labels = LabelMap::filled(h, w, 0);
  labels.at(3, 4) = kVoidClass;
  InstanceMap inst = InstanceMap::filled(h, w, 0);
  for (int i = 0; i < 6; ++i) inst.data[i] = 1;
  for (int i = 10; i < 14; ++i) inst.data[i] = 2;
  auto instances = extract_instances(labels, inst);
  const auto layout = EmbeddingLayout::full(dim);
  LossConfig cfg;
  auto got = instance_loss(fields, labels, instances, layout, cfg);

  std::vector<int> support;
  for (int i = 0; i < h * w; ++i)
    if (labels.data[i] != kVoidClass) support.push_back(i);
  double expect = 0.0;
  for (const auto& il : instances) {
    auto st = instance_stats(fields, il.pixels, layout);
    std::vector<double> phi;
    std::vector<int> member;
    for (int i : support) {
      const auto rho = pixel_position(i / w, i % w, h, w);
      phi.push_back(phi_kernel(layout.ins(fields.e.pixel(i)), rho, st.mu,
                               st.rho, st.sigma, st.sigma_spatial));
      member.push_back(inst.data[i] == il.instance_id ? 1 : 0);
    }
    expect += lovasz_binary(phi, member).loss;
  }
  expect /= static_cast<double>(instances.size());
  CHECK(got.loss == doctest::Approx(expect).epsilon(1e-12));
  CHECK(got.instances == 2);
}

TEST_CASE("instance_loss with no instances is zero with zero grads") {
  SplitMix64 rng(35);
  auto fields = test::random_fields(rng, 2, 2, 2);
  LabelMap labels = LabelMap::filled(2, 2, 0);
  auto r = instance_loss(fields, labels, {}, EmbeddingLayout::full(2), {});
  CHECK(r.loss == 0.0);
  CHECK(r.instances == 0);
  for (double g : r.grad_e.data) CHECK(g == 0.0);
}

TEST_CASE("bounding-box support ignores far-away pixels") {
  SplitMix64 rng(37);
  const int h = 12, w = 40, dim = 3;
  auto fields = test::random_fields(rng, h, w, dim);
  LabelMap labels = LabelMap::filled(h, w, 0);
  InstanceMap inst = InstanceMap::filled(h, w, 0);
  inst.at(5, 2) = 1;
  inst.at(5, 3) = 1;
  auto instances = extract_instances(labels, inst);
  LossConfig tight;
  tight.instance_support = InstanceSupport::BoundingBox;
  tight.bbox_margin = 2;
  auto base = instance_loss(fields, labels, instances,
                            EmbeddingLayout::full(dim), tight);
  // Perturbing a pixel far outside the padded box cannot change the loss.
  fields.e.at(5, 30, 0) = -fields.e.at(5, 30, 0);
  auto moved = instance_loss(fields, labels, instances,
                             EmbeddingLayout::full(dim), tight);
  CHECK(base.loss == moved.loss);
  // FullImage support does feel a distant pixel -- provided its error is
  // big enough to sort before the member pixels, since the extension's
  // increments vanish once every member has been consumed. Align members
  // and probe so the probe's affinity (hence error) dominates.
  for (int d = 0; d < dim; ++d) {
    const double v = d == 0 ? 1.0 : 0.0;
    fields.e.at(5, 2, d) = v;
    fields.e.at(5, 3, d) = v;
    fields.e.at(5, 30, d) = v;
  }
  LossConfig full;
  auto wide0 = instance_loss(fields, labels, instances,
                             EmbeddingLayout::full(dim), full);
  fields.e.at(5, 30, 0) = 0.0;  // rotate the probe a quarter turn
  fields.e.at(5, 30, 1) = 1.0;
  auto wide1 = instance_loss(fields, labels, instances,
                             EmbeddingLayout::full(dim), full);
  CHECK(wide0.loss != wide1.loss);
}

TEST_CASE("semantic_loss value matches lovasz_softmax on psi rows") {
  SplitMix64 rng(39);
  const int h = 3, w = 4, dim = 4, C = 3;
  auto fields = test::random_fields(rng, h, w, dim);
  auto state = test::random_state(rng, C, dim);
  LabelMap labels = LabelMap::filled(h, w, 0);
  for (int i = 0; i < h * w; ++i)
    labels.data[i] = static_cast<std::int32_t>(rng.next_below(C));
  labels.data[5] = kVoidClass;
  const auto layout = EmbeddingLayout::full(dim);
  auto got = semantic_loss(fields, labels, state, layout, {});

  std::vector<double> probs;
  std::vector<std::int32_t> flat;
  for (int i = 0; i < h * w; ++i) {
    auto psi = psi_scores(layout.sem(fields.e.pixel(i)), state);
    probs.insert(probs.end(), psi.begin(), psi.end());
    flat.push_back(labels.data[i]);
  }
  auto expect = lovasz_softmax(probs, flat, C, ClassAveraging::All);
  CHECK(got.loss == doctest::Approx(expect.loss).epsilon(1e-12));
}

TEST_CASE("semantic terms hold the anchors fixed") {
  SplitMix64 rng(41);
  const int dim = 4, C = 2;
  auto fields = test::random_fields(rng, 2, 3, dim);
  auto state = test::random_state(rng, C, dim);
  LabelMap labels = LabelMap::filled(2, 3, 0);
  labels.data[4] = 1;
  const auto layout = EmbeddingLayout::full(dim);
  auto a = semantic_loss(fields, labels, state, layout, {});
  // Moving an anchor changes the value...
  auto state2 = state;
  for (int d = 0; d < dim; ++d) state2.row(1)[d] = -state2.row(1)[d];
  auto b = semantic_loss(fields, labels, state2, layout, {});
  CHECK(a.loss != b.loss);
  // ...but the result exposes gradients only for e and sigma_sem (struct
  // contract), and those stay finite.
  CHECK(a.grad_e.data.size() == fields.e.data.size());
  CHECK(a.grad_sigma_sem.size() == static_cast<std::size_t>(C));
}

TEST_CASE("cross entropy is -log psi at the label") {
  SplitMix64 rng(43);
  const int dim = 3, C = 2;
  auto fields = test::random_fields(rng, 1, 2, dim);
  auto state = test::random_state(rng, C, dim);
  LabelMap labels = LabelMap::filled(1, 2, 0);
  labels.data[1] = kVoidClass;
  const auto layout = EmbeddingLayout::full(dim);
  auto got = semantic_cross_entropy(fields, labels, state, layout);
  auto psi = psi_scores(layout.sem(fields.e.pixel(0)), state);
  CHECK(got.loss == doctest::Approx(-std::log(psi[0])).epsilon(1e-12));
}

TEST_CASE("seed_loss hand values") {
  auto catalog = test::make_catalog(1, 1);
  SUBCASE("stuff pixel at 0.5 contributes a quarter; void is excluded") {
    PixelFields f = uniform_fields(1, 2, 2, {1.0, 0.0}, 0.3, 0.3, 0.5);
    LabelMap labels = LabelMap::filled(1, 2, 1);
    labels.data[1] = kVoidClass;
    auto r = seed_loss(f, labels, {}, catalog, EmbeddingLayout::full(2));
    CHECK(r.support == 1);
    CHECK(r.loss == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("instance pixels regress onto their own phi") {
    PixelFields f = uniform_fields(1, 2, 2, {1.0, 0.0}, 0.3, 0.25, 0.0);
    LabelMap labels = LabelMap::filled(1, 2, 0);
    InstanceMap inst = InstanceMap::filled(1, 2, 1);
    auto instances = extract_instances(labels, inst);
    const auto layout = EmbeddingLayout::full(2);
    auto st = instance_stats(f, instances[0].pixels, layout);
    // both pixels share phi by symmetry
    const double phi =
        phi_kernel(layout.ins(f.e.pixel(0)), pixel_position(0, 0, 1, 2),
                   st.mu, st.rho, st.sigma, st.sigma_spatial);
    f.seed = FieldGrid::filled(1, 2, 1, phi - 0.2);
    auto r = seed_loss(f, labels, instances, catalog, layout);
    CHECK(r.support == 2);
    CHECK(r.loss == doctest::Approx(0.04).epsilon(1e-12));
  }
  SUBCASE("thing pixels without an instance are excluded") {
    PixelFields f = uniform_fields(1, 2, 2, {1.0, 0.0}, 0.3, 0.3, 0.7);
    LabelMap labels = LabelMap::filled(1, 2, 0);  // thing class, no instance
    auto r = seed_loss(f, labels, {}, catalog, EmbeddingLayout::full(2));
    CHECK(r.support == 0);
    CHECK(r.loss == 0.0);
  }
}

TEST_CASE("seed_loss targets are stop-gradients") {
  SplitMix64 rng(45);
  auto catalog = test::make_catalog(1, 1);
  auto f = test::random_fields(rng, 2, 3, 3);
  LabelMap labels = LabelMap::filled(2, 3, 0);
  InstanceMap inst = InstanceMap::filled(2, 3, 1);
  auto instances = extract_instances(labels, inst);
  const auto layout = EmbeddingLayout::full(3);
  auto a = seed_loss(f, labels, instances, catalog, layout);
  // Perturbing an embedding moves the target phi, hence the value...
  f.e.at(0, 0, 0) += 0.2;
  auto b = seed_loss(f, labels, instances, catalog, layout);
  CHECK(a.loss != b.loss);
  // ...but gradients are defined only for the seed channel.
  CHECK(a.grad_seed.data.size() == static_cast<std::size_t>(6));
  // Analytic gradient: 2 (s - target) / support.
  auto fd = central_difference(
      [&](const std::vector<double>& s) {
        PixelFields g = f;
        g.seed.data = s;
        return seed_loss(g, labels, instances, catalog, layout).loss;
      },
      f.seed.data, 1e-6);
  CHECK(max_relative_error(b.grad_seed.data, fd) < 1e-7);
}

TEST_CASE("ins_var hand value") {
  PixelFields f;
  f.e = FieldGrid::zeros(1, 2, 2);
  f.e.pixel(0)[0] = 1.0;
  f.e.pixel(1)[0] = 1.0;
  f.sigma = FieldGrid::zeros(1, 2, 1);
  f.sigma.data = {0.2, 0.4};
  f.sigma_spatial = FieldGrid::filled(1, 2, 1, 0.3);  // uniform: no spread
  f.seed = FieldGrid::filled(1, 2, 1, 0.0);
  InstancePixels il;
  il.instance_id = 1;
  il.class_id = 0;
  il.pixels = {0, 1};
  auto r = ins_var_loss(f, {il}, 10.0);
  CHECK(r.support == 2);
  // gamma * ((0.1^2 + 0.1^2) + 0) / 2 = 10 * 0.02 / 2 = 0.1
  CHECK(r.loss == doctest::Approx(0.1).epsilon(1e-12));
  // doubling gamma doubles the value
  auto r2 = ins_var_loss(f, {il}, 20.0);
  CHECK(r2.loss == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("ins_var is zero for uniform bandwidths") {
  PixelFields f = uniform_fields(2, 2, 2, {1.0, 0.0}, 0.4, 0.3, 0.0);
  InstancePixels il;
  il.pixels = {0, 1, 2, 3};
  auto r = ins_var_loss(f, {il}, 10.0);
  CHECK(r.loss == 0.0);
  for (double g : r.grad_sigma.data) CHECK(g == 0.0);
}

TEST_CASE("seg_mean hand value and present-class averaging") {
  // Class 0 pixels all sit at (0,1); its anchor at (1,0): ||diff||^2 = 2.
  PixelFields f = uniform_fields(1, 2, 2, {0.0, 1.0}, 0.3, 0.3, 0.0);
  LabelMap labels = LabelMap::filled(1, 2, 0);
  SemanticState st;
  st.num_classes = 2;
  st.dim = 2;
  st.mu = {1.0, 0.0, 0.0, 1.0};
  st.sigma = {0.3, 0.3};
  auto r = seg_mean_loss(f, labels, st, EmbeddingLayout::full(2));
  CHECK(r.present == 1);  // class 1 absent: contributes nothing
  CHECK(r.loss == doctest::Approx(2.0).epsilon(1e-12));
  REQUIRE(r.grad_mu.size() == 4);
  // d/dmu0 of ||mu0 - m||^2 / 1 = 2 (mu0 - m)
  CHECK(r.grad_mu[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.grad_mu[1] == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(r.grad_mu[2] == 0.0);  // absent class: zero gradient
  CHECK(r.grad_mu[3] == 0.0);
}

TEST_CASE("seg_mean batch means are stop-gradients") {
  SplitMix64 rng(47);
  auto f = test::random_fields(rng, 2, 3, 3);
  auto st = test::random_state(rng, 2, 3);
  LabelMap labels = LabelMap::filled(2, 3, 0);
  labels.data[0] = 1;
  const auto layout = EmbeddingLayout::full(3);
  auto a = seg_mean_loss(f, labels, st, layout);
  f.e.at(1, 1, 0) += 0.3;  // moves the class-0 batch mean
  auto b = seg_mean_loss(f, labels, st, layout);
  CHECK(a.loss != b.loss);  // value responds to e
  // gradient exists only for the anchors, and matches FD in them
  auto fd = central_difference(
      [&](const std::vector<double>& mu) {
        SemanticState s2 = st;
        s2.mu = mu;
        return seg_mean_loss(f, labels, s2, layout).loss;
      },
      st.mu, 1e-6);
  CHECK(max_relative_error(b.grad_mu, fd) < 1e-7);
}

TEST_CASE("total loss is the literal sum of its five terms") {
  SplitMix64 rng(49);
  const int h = 4, w = 6, dim = 4;
  auto catalog = test::make_catalog(1, 2);
  auto fields = test::random_fields(rng, h, w, dim);
  auto state = test::random_state(rng, 3, dim);
  LabelMap labels = LabelMap::filled(h, w, 1);
  InstanceMap inst = InstanceMap::filled(h, w, 0);
  for (int i = 0; i < 5; ++i) {
    labels.data[i] = 0;
    inst.data[i] = 1;
  }
  for (int i = 12; i < 15; ++i) {
    labels.data[i] = 0;
    inst.data[i] = 2;
  }
  labels.data[23] = 2;
  labels.data[22] = kVoidClass;
  const auto layout = EmbeddingLayout::full(dim);
  LossConfig cfg;
  auto total = total_loss(fields, labels, inst, state, catalog, layout, cfg);
  auto instances = extract_instances(labels, inst);
  auto seg = semantic_loss(fields, labels, state, layout, cfg);
  auto segm = seg_mean_loss(fields, labels, state, layout);
  auto ins = instance_loss(fields, labels, instances, layout, cfg);
  auto ivar = ins_var_loss(fields, instances, cfg.gamma);
  auto seed = seed_loss(fields, labels, instances, catalog, layout);
  CHECK(total.report.seg == seg.loss);
  CHECK(total.report.seg_mean == segm.loss);
  CHECK(total.report.ins == ins.loss);
  CHECK(total.report.ins_var == ivar.loss);
  CHECK(total.report.seed == seed.loss);
  CHECK(total.report.total ==
        seg.loss + segm.loss + ins.loss + ivar.loss + seed.loss);
  CHECK(total.report.instances == 2);
  // gradient channels accumulate the matching per-term pieces
  for (std::size_t i = 0; i < total.grad_e.data.size(); ++i)
    CHECK(total.grad_e.data[i] ==
          doctest::Approx(seg.grad_e.data[i] + ins.grad_e.data[i])
              .epsilon(1e-15));
  for (std::size_t i = 0; i < total.grad_seed.data.size(); ++i)
    CHECK(total.grad_seed.data[i] == seed.grad_seed.data[i]);
  for (std::size_t i = 0; i < total.grad_mu.size(); ++i)
    CHECK(total.grad_mu[i] == segm.grad_mu[i]);
}

TEST_CASE("the stack is equivariant under embedding-space rotation") {
  // Rotating every embedding and anchor by the same orthogonal map leaves
  // every cosine distance, hence every loss term, unchanged.
  SplitMix64 rng(51);
  const int h = 3, w = 4, dim = 3;
  auto catalog = test::make_catalog(1, 1);
  auto fields = test::random_fields(rng, h, w, dim);
  auto state = test::random_state(rng, 2, dim);
  LabelMap labels = LabelMap::filled(h, w, 1);
  InstanceMap inst = InstanceMap::filled(h, w, 0);
  for (int i = 0; i < 4; ++i) {
    labels.data[i] = 0;
    inst.data[i] = 1;
  }
  const auto layout = EmbeddingLayout::full(dim);
  auto before = total_loss(fields, labels, inst, state, catalog, layout, {});

  // Householder reflection through a random unit normal: orthogonal.
  auto n = random_unit(rng, dim);
  auto reflect = [&](std::span<double> v) {
    double d = 0.0;
    for (int k = 0; k < dim; ++k) d += v[k] * n[k];
    for (int k = 0; k < dim; ++k) v[k] -= 2.0 * d * n[k];
  };
  for (int i = 0; i < h * w; ++i) reflect(fields.e.pixel(i));
  for (int k = 0; k < 2; ++k) reflect(state.row(k));
  auto after = total_loss(fields, labels, inst, state, catalog, layout, {});
  CHECK(after.report.total ==
        doctest::Approx(before.report.total).epsilon(1e-9));
  CHECK(after.report.seg == doctest::Approx(before.report.seg).epsilon(1e-9));
  CHECK(after.report.ins == doctest::Approx(before.report.ins).epsilon(1e-9));
}

TEST_CASE("ae_loss hand values") {
  SUBCASE("pull hinge squared at 0.2 beyond the margin") {
    FieldGrid e = FieldGrid::zeros(1, 2, 2);
    e.pixel(0)[0] = 0.5;
    e.pixel(1)[0] = -0.5;  // mean (0,0); each member L1 distance 0.5
    InstancePixels cl;
    cl.pixels = {0, 1};
    auto r = ae_loss(e, {cl}, 0.3, 1.2);
    CHECK(r.pull == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(r.push == 0.0);
    CHECK(r.loss == doctest::Approx(0.04).epsilon(1e-12));
  }
  SUBCASE("members inside the margin pull nothing") {
    FieldGrid e = FieldGrid::zeros(1, 2, 2);
    e.pixel(0)[0] = 0.1;
    e.pixel(1)[0] = -0.1;
    InstancePixels cl;
    cl.pixels = {0, 1};
    auto r = ae_loss(e, {cl}, 0.3, 1.2);
    CHECK(r.loss == 0.0);
  }
  SUBCASE("push hinge between close cluster means") {
    FieldGrid e = FieldGrid::zeros(1, 2, 2);
    e.pixel(0)[0] = 0.0;
    e.pixel(1)[0] = 0.5;  // singleton means 0.5 apart in L1
    InstancePixels a, b;
    a.pixels = {0};
    b.pixels = {1};
    auto r = ae_loss(e, {a, b}, 0.3, 1.2);
    CHECK(r.pull == 0.0);
    CHECK(r.push == doctest::Approx(0.49).epsilon(1e-12));  // (1.2-0.5)^2
  }
  SUBCASE("far means push nothing") {
    FieldGrid e = FieldGrid::zeros(1, 2, 2);
    e.pixel(0)[0] = 0.0;
    e.pixel(1)[0] = 2.0;
    InstancePixels a, b;
    a.pixels = {0};
    b.pixels = {1};
    auto r = ae_loss(e, {a, b}, 0.3, 1.2);
    CHECK(r.loss == 0.0);
  }
  SUBCASE("empty cluster is rejected") {
    FieldGrid e = FieldGrid::zeros(1, 1, 2);
    InstancePixels empty;
    CHECK_THROWS_AS((void)ae_loss(e, {empty}, 0.3, 1.2),
                    std::invalid_argument);
  }
}

TEST_CASE("ae_loss gradient matches central differences off kinks") {
  SplitMix64 rng(53);
  int done = 0;
  while (done < 10) {
    FieldGrid e = FieldGrid::zeros(1, 4, 2);
    for (double& v : e.data) v = rng.next_uniform(-1.0, 1.0);
    InstancePixels a, b;
    a.pixels = {0, 1};
    b.pixels = {2, 3};
    // keep clear of both hinges and of sign kinks
    auto means = std::array<std::vector<double>, 2>{
        mean_embedding(e, a.pixels), mean_embedding(e, b.pixels)};
    bool clear = true;
    for (int cl = 0; cl < 2 && clear; ++cl)
      for (int m = 0; m < 2; ++m) {
        const auto& mu = means[cl];
        const auto v = e.pixel(cl * 2 + m);
        double dist = 0.0;
        for (int d = 0; d < 2; ++d) {
          if (std::abs(v[d] - mu[d]) < 1e-3) clear = false;
          dist += std::abs(v[d] - mu[d]);
        }
        if (std::abs(dist - 0.3) < 1e-3) clear = false;
      }
    double push_dist = 0.0;
    for (int d = 0; d < 2; ++d) {
      if (std::abs(means[0][d] - means[1][d]) < 1e-3) clear = false;
      push_dist += std::abs(means[0][d] - means[1][d]);
    }
    if (std::abs(push_dist - 1.2) < 1e-3) clear = false;
    if (!clear) continue;
    ++done;
    auto r = ae_loss(e, {a, b}, 0.3, 1.2);
    auto fd = central_difference(
        [&](const std::vector<double>& x) {
          FieldGrid g = e;
          g.data = x;
          return ae_loss(g, {a, b}, 0.3, 1.2).loss;
        },
        e.data, 1e-6);
    CHECK(max_relative_error(r.grad_e.data, fd) < 1e-6);
  }
}
