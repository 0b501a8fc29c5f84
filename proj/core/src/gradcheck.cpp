#include "hle/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "hle/embed.hpp"
#include "hle/grid.hpp"
#include "hle/lovasz.hpp"
#include "hle/numeric.hpp"

namespace hle {

namespace {

constexpr double kTieMargin = 2e-3;
constexpr int kMaxResample = 20000;

bool gaps_clear(const std::vector<double>& xi, double margin) {
  std::vector<double> s = xi;
  std::sort(s.begin(), s.end());
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] - s[i - 1] < margin) return false;
  return true;
}

std::vector<double> binary_errors(std::span<const double> p,
                                  std::span<const int> t) {
  std::vector<double> xi(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) xi[i] = t[i] ? 1.0 - p[i] : p[i];
  return xi;
}

/// Fixed 3x4 test scene: two 3-pixel instances on two thing classes, two
/// stuff classes, one void pixel. Small enough that finite differences over
/// every variable stay cheap.
struct TinyScene {
  LabelMap labels;
  InstanceMap instances;
  ClassCatalog catalog;
  std::vector<InstancePixels> insts;
};

TinyScene tiny_scene() {
  TinyScene s;
  s.labels.height = 3;
  s.labels.width = 4;
  s.labels.data = {0, 0, 1, 2,  //
                   0, 2, 1, 1,  //
                   2, 2, 3, kVoidClass};
  s.instances.height = 3;
  s.instances.width = 4;
  s.instances.data = {1, 1, 2, 0,  //
                      1, 0, 2, 2,  //
                      0, 0, 0, 0};
  s.catalog = ClassCatalog({{0, "a", ClassKind::Thing},
                            {1, "b", ClassKind::Thing},
                            {2, "c", ClassKind::Stuff},
                            {3, "d", ClassKind::Stuff}});
  s.insts = extract_instances(s.labels, s.instances);
  return s;
}

PixelFields random_fields(SplitMix64& rng, int height, int width, int dim) {
  PixelFields f;
  f.e = FieldGrid::zeros(height, width, dim);
  f.sigma = FieldGrid::zeros(height, width, 1);
  f.sigma_spatial = FieldGrid::zeros(height, width, 1);
  f.seed = FieldGrid::zeros(height, width, 1);
  for (int i = 0; i < f.pixels(); ++i) {
    const auto u = random_unit(rng, dim);
    std::copy(u.begin(), u.end(), f.e.pixel(i).begin());
    f.sigma.data[static_cast<std::size_t>(i)] = rng.next_uniform(0.3, 0.6);
    f.sigma_spatial.data[static_cast<std::size_t>(i)] =
        rng.next_uniform(0.3, 0.6);
    f.seed.data[static_cast<std::size_t>(i)] = rng.next_uniform(0.1, 0.9);
  }
  return f;
}

SemanticState random_state(SplitMix64& rng, int num_classes, int dim) {
  SemanticState st;
  st.num_classes = num_classes;
  st.dim = dim;
  st.mu.resize(static_cast<std::size_t>(num_classes) * dim);
  st.sigma.resize(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    const auto u = random_unit(rng, dim);
    std::copy(u.begin(), u.end(), st.row(k).begin());
    st.sigma[static_cast<std::size_t>(k)] = rng.next_uniform(0.3, 0.6);
  }
  return st;
}

/// Errors of one instance's binary problem under the current fields.
std::vector<double> instance_errors(const PixelFields& f, const TinyScene& s,
                                    const InstancePixels& inst,
                                    const EmbeddingLayout& layout) {
  const InstanceStats st = instance_stats(f, inst.pixels, layout);
  std::vector<double> xi;
  for (int i = 0; i < f.pixels(); ++i) {
    if (s.labels.data[static_cast<std::size_t>(i)] == kVoidClass) continue;
    const auto rho =
        pixel_position(i / f.width(), i % f.width(), f.height(), f.width());
    const double phi = phi_kernel(layout.ins(f.e.pixel(i)), rho, st.mu,
                                  st.rho, st.sigma, st.sigma_spatial);
    const bool member =
        std::binary_search(inst.pixels.begin(), inst.pixels.end(), i);
    xi.push_back(member ? 1.0 - phi : phi);
  }
  return xi;
}

bool semantic_tie_free(const PixelFields& f, const TinyScene& s,
                       const SemanticState& st,
                       const EmbeddingLayout& layout) {
  const int C = st.num_classes;
  std::vector<std::vector<double>> xi(static_cast<std::size_t>(C));
  for (int i = 0; i < f.pixels(); ++i) {
    const std::int32_t l = s.labels.data[static_cast<std::size_t>(i)];
    if (l == kVoidClass) continue;
    const std::vector<double> psi = psi_scores(layout.sem(f.e.pixel(i)), st);
    for (int c = 0; c < C; ++c)
      xi[static_cast<std::size_t>(c)].push_back(
          l == c ? 1.0 - psi[static_cast<std::size_t>(c)]
                 : psi[static_cast<std::size_t>(c)]);
  }
  for (const auto& v : xi)
    if (!gaps_clear(v, kTieMargin)) return false;
  return true;
}

using Probe = std::function<void(SplitMix64&, std::vector<double>&,
                                 std::vector<double>&)>;
// A probe draws one tie-free problem and fills (analytic gradient, finite
// difference) for the same flat variable vector.

GradCheckReport run_probe(const std::string& name, const Probe& probe,
                          int trials, SplitMix64& rng, double tolerance) {
  GradCheckReport rep;
  rep.name = name;
  rep.trials = trials;
  rep.tolerance = tolerance;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> analytic, fd;
    probe(rng, analytic, fd);
    rep.max_rel_err =
        std::max(rep.max_rel_err, max_relative_error(analytic, fd));
  }
  rep.pass = rep.max_rel_err < tolerance;
  return rep;
}

template <class Gen>
void resample_until(SplitMix64&, Gen&& ok) {
  for (int attempt = 0; attempt < kMaxResample; ++attempt)
    if (ok()) return;
  throw std::logic_error("gradcheck: could not draw a tie-free problem");
}

}  // namespace

std::vector<GradCheckReport> run_gradient_checks(int trials,
                                                 std::uint64_t seed,
                                                 double h, double tolerance) {
  if (trials <= 0)
    throw std::invalid_argument("run_gradient_checks: trials must be positive");
  SplitMix64 rng(seed);
  const TinyScene scene = tiny_scene();
  const int D = 4;
  const EmbeddingLayout layout = EmbeddingLayout::full(D);
  std::vector<GradCheckReport> out;

  // --- plain binary hinge -----------------------------------------------
  out.push_back(run_probe(
      "lovasz_binary",
      [&](SplitMix64& r, std::vector<double>& analytic,
          std::vector<double>& fd) {
        const int n = 4 + static_cast<int>(r.next_below(7));
        std::vector<double> p(static_cast<std::size_t>(n));
        std::vector<int> t(static_cast<std::size_t>(n));
        resample_until(r, [&] {
          for (auto& v : p) v = r.next_uniform(0.02, 0.98);
          for (auto& v : t) v = static_cast<int>(r.next_below(2));
          return gaps_clear(binary_errors(p, t), kTieMargin);
        });
        analytic = lovasz_binary(p, t).grad;
        fd = central_difference(
            [&](const std::vector<double>& x) {
              return lovasz_binary(x, t).loss;
            },
            p, h);
      },
      trials, rng, tolerance));

  // --- multi-class mean ---------------------------------------------------
  out.push_back(run_probe(
      "lovasz_softmax",
      [&](SplitMix64& r, std::vector<double>& analytic,
          std::vector<double>& fd) {
        const int n = 6, C = 3;
        std::vector<double> probs(static_cast<std::size_t>(n) * C);
        std::vector<std::int32_t> labels(static_cast<std::size_t>(n));
        resample_until(r, [&] {
          for (auto& v : probs) v = r.next_uniform(0.05, 0.95);
          for (auto& v : labels)
            v = static_cast<std::int32_t>(r.next_below(C));
          labels[static_cast<std::size_t>(n - 1)] = kVoidClass;  // keep one void
          for (int c = 0; c < C; ++c) {
            std::vector<double> xi;
            for (int i = 0; i < n; ++i) {
              if (labels[static_cast<std::size_t>(i)] == kVoidClass) continue;
              const double pc = probs[static_cast<std::size_t>(i) * C + c];
              xi.push_back(labels[static_cast<std::size_t>(i)] == c ? 1.0 - pc
                                                                    : pc);
            }
            if (!gaps_clear(xi, kTieMargin)) return false;
          }
          return true;
        });
        analytic = lovasz_softmax(probs, labels, C).grad;
        fd = central_difference(
            [&](const std::vector<double>& x) {
              return lovasz_softmax(x, labels, C).loss;
            },
            probs, h);
      },
      trials, rng, tolerance));

  // Flat packing helpers for the field losses: e, then sigma, then spatial.
  const auto pack_fields = [](const PixelFields& f, bool with_e,
                              bool with_sigma, bool with_sp) {
    std::vector<double> x;
    if (with_e) x.insert(x.end(), f.e.data.begin(), f.e.data.end());
    if (with_sigma) x.insert(x.end(), f.sigma.data.begin(), f.sigma.data.end());
    if (with_sp)
      x.insert(x.end(), f.sigma_spatial.data.begin(),
               f.sigma_spatial.data.end());
    return x;
  };
  const auto unpack_fields = [](PixelFields f, const std::vector<double>& x,
                                bool with_e, bool with_sigma, bool with_sp) {
    std::size_t at = 0;
    if (with_e) {
      std::copy(x.begin() + at, x.begin() + at + f.e.data.size(),
                f.e.data.begin());
      at += f.e.data.size();
    }
    if (with_sigma) {
      std::copy(x.begin() + at, x.begin() + at + f.sigma.data.size(),
                f.sigma.data.begin());
      at += f.sigma.data.size();
    }
    if (with_sp)
      std::copy(x.begin() + at, x.begin() + at + f.sigma_spatial.data.size(),
                f.sigma_spatial.data.begin());
    return f;
  };

  // --- instance term: embeddings and both bandwidth channels --------------
  out.push_back(run_probe(
      "instance_loss",
      [&](SplitMix64& r, std::vector<double>& analytic,
          std::vector<double>& fd) {
        PixelFields f;
        resample_until(r, [&] {
          f = random_fields(r, 3, 4, D);
          for (const auto& inst : scene.insts)
            if (!gaps_clear(instance_errors(f, scene, inst, layout),
                            kTieMargin))
              return false;
          return true;
        });
        LossConfig cfg;
        const InstanceLossResult res =
            instance_loss(f, scene.labels, scene.insts, layout, cfg);
        analytic = res.grad_e.data;
        analytic.insert(analytic.end(), res.grad_sigma.data.begin(),
                        res.grad_sigma.data.end());
        analytic.insert(analytic.end(), res.grad_sigma_spatial.data.begin(),
                        res.grad_sigma_spatial.data.end());
        fd = central_difference(
            [&](const std::vector<double>& x) {
              return instance_loss(unpack_fields(f, x, true, true, true),
                                   scene.labels, scene.insts, layout, cfg)
                  .loss;
            },
            pack_fields(f, true, true, true), h);
      },
      trials, rng, tolerance));

  // --- semantic term: embeddings and class bandwidths ---------------------
  out.push_back(run_probe(
      "semantic_loss",
      [&](SplitMix64& r, std::vector<double>& analytic,
          std::vector<double>& fd) {
        PixelFields f;
        SemanticState st;
        resample_until(r, [&] {
          f = random_fields(r, 3, 4, D);
          st = random_state(r, scene.catalog.size(), D);
          return semantic_tie_free(f, scene, st, layout);
        });
        LossConfig cfg;
        const SemanticLossResult res =
            semantic_loss(f, scene.labels, st, layout, cfg);
        analytic = res.grad_e.data;
        analytic.insert(analytic.end(), res.grad_sigma_sem.begin(),
                        res.grad_sigma_sem.end());
        std::vector<double> x = f.e.data;
        x.insert(x.end(), st.sigma.begin(), st.sigma.end());
        fd = central_difference(
            [&](const std::vector<double>& v) {
              PixelFields ff = f;
              std::copy(v.begin(), v.begin() + ff.e.data.size(),
                        ff.e.data.begin());
              SemanticState ss = st;
              std::copy(v.begin() + ff.e.data.size(), v.end(),
                        ss.sigma.begin());
              return semantic_loss(ff, scene.labels, ss, layout, cfg).loss;
            },
            x, h);
      },
      trials, rng, tolerance));

  // --- seed regression (smooth, no ties to dodge) --------------------------
  out.push_back(run_probe(
      "seed_loss",
      [&](SplitMix64& r, std::vector<double>& analytic,
          std::vector<double>& fd) {
        const PixelFields f = random_fields(r, 3, 4, D);
        const SeedLossResult res =
            seed_loss(f, scene.labels, scene.insts, scene.catalog, layout);
        analytic = res.grad_seed.data;
        fd = central_difference(
            [&](const std::vector<double>& x) {
              PixelFields ff = f;
              ff.seed.data = x;
              return seed_loss(ff, scene.labels, scene.insts, scene.catalog,
                               layout)
                  .loss;
            },
            f.seed.data, h);
      },
      trials, rng, tolerance));

  // --- bandwidth variance (quadratic; finite differences are exact up to
  //     rounding because the mean-deviation terms cancel) ------------------
  out.push_back(run_probe(
      "ins_var_loss",
      [&](SplitMix64& r, std::vector<double>& analytic,
          std::vector<double>& fd) {
        const PixelFields f = random_fields(r, 3, 4, D);
        const double gamma = 10.0;
        const InsVarLossResult res = ins_var_loss(f, scene.insts, gamma);
        analytic = res.grad_sigma.data;
        analytic.insert(analytic.end(), res.grad_sigma_spatial.data.begin(),
                        res.grad_sigma_spatial.data.end());
        fd = central_difference(
            [&](const std::vector<double>& x) {
              return ins_var_loss(unpack_fields(f, x, false, true, true),
                                  scene.insts, gamma)
                  .loss;
            },
            pack_fields(f, false, true, true), h);
      },
      trials, rng, tolerance));

  // --- anchor pull (quadratic in mu) ---------------------------------------
  out.push_back(run_probe(
      "seg_mean_loss",
      [&](SplitMix64& r, std::vector<double>& analytic,
          std::vector<double>& fd) {
        const PixelFields f = random_fields(r, 3, 4, D);
        const SemanticState st = random_state(r, scene.catalog.size(), D);
        const SegMeanLossResult res =
            seg_mean_loss(f, scene.labels, st, layout);
        analytic = res.grad_mu;
        fd = central_difference(
            [&](const std::vector<double>& x) {
              SemanticState ss = st;
              ss.mu = x;
              return seg_mean_loss(f, scene.labels, ss, layout).loss;
            },
            st.mu, h);
      },
      trials, rng, tolerance));

  // --- associative-embedding baseline --------------------------------------
  out.push_back(run_probe(
      "ae_loss",
      [&](SplitMix64& r, std::vector<double>& analytic,
          std::vector<double>& fd) {
        const double d_pull = 0.4, d_push = 1.0;
        PixelFields f;
        resample_until(r, [&] {
          f = random_fields(r, 3, 4, D);
          // hinge activations and L1 signs must all clear the margin
          std::vector<std::vector<double>> means;
          for (const auto& inst : scene.insts) {
            const auto mu = mean_embedding(f.e, inst.pixels);
            for (int idx : inst.pixels) {
              double dist = 0.0;
              const auto v = f.e.pixel(idx);
              for (int d = 0; d < D; ++d) {
                const double diff = v[static_cast<std::size_t>(d)] -
                                    mu[static_cast<std::size_t>(d)];
                if (std::abs(diff) < kTieMargin) return false;
                dist += std::abs(diff);
              }
              if (std::abs(dist - d_pull) < kTieMargin) return false;
            }
            means.push_back(mu);
          }
          for (std::size_t a = 0; a < means.size(); ++a)
            for (std::size_t b = a + 1; b < means.size(); ++b) {
              double dist = 0.0;
              for (int d = 0; d < D; ++d) {
                const double diff = means[a][static_cast<std::size_t>(d)] -
                                    means[b][static_cast<std::size_t>(d)];
                if (std::abs(diff) < kTieMargin) return false;
                dist += std::abs(diff);
              }
              if (std::abs(d_push - dist) < kTieMargin) return false;
            }
          return true;
        });
        const AeLossResult res = ae_loss(f.e, scene.insts, d_pull, d_push);
        analytic = res.grad_e.data;
        fd = central_difference(
            [&](const std::vector<double>& x) {
              FieldGrid e = f.e;
              e.data = x;
              return ae_loss(e, scene.insts, d_pull, d_push).loss;
            },
            f.e.data, h);
      },
      trials, rng, tolerance));

  return out;
}

}  // namespace hle
