#include "hle/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "hle/numeric.hpp"
#include "hle/thomson.hpp"

namespace hle {

namespace {

struct AdamState {
  std::vector<double> m, v;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam step on a flat parameter vector.
void adam_step(std::vector<double>& x, const std::vector<double>& g,
               AdamState& st, const TrainConfig& cfg, int t,
               double lr_scale = 1.0) {
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < x.size(); ++i) {
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    x[i] -= lr_scale * cfg.step_size * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
  }
}

EmbeddingLayout layout_for(const TrainConfig& cfg) {
  return cfg.variant == LossVariant::SplitEmbedding
             ? EmbeddingLayout::split(cfg.dim)
             : EmbeddingLayout::full(cfg.dim);
}

/// Renormalizes each pixel row blockwise: the whole row for the shared
/// sphere, each half separately for the split layout.
void project_embeddings(FieldGrid& e, const EmbeddingLayout& layout) {
  const bool split = layout.is_split(e.channels);
  for (int i = 0; i < e.pixels(); ++i) {
    auto row = e.pixel(i);
    if (!split) {
      normalize(row);
    } else {
      normalize(row.subspan(static_cast<std::size_t>(layout.sem_begin),
                            static_cast<std::size_t>(layout.sem_dim())));
      normalize(row.subspan(static_cast<std::size_t>(layout.ins_begin),
                            static_cast<std::size_t>(layout.ins_dim())));
    }
  }
}

void project_anchors(SemanticState& state) {
  for (int k = 0; k < state.num_classes; ++k) normalize(state.row(k));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Class-level pixel clusters (present classes, ascending id) for the
/// associative-embedding semantic term.
std::vector<InstancePixels> class_clusters(const LabelMap& labels) {
  std::map<std::int32_t, InstancePixels> by_class;
  for (int i = 0; i < labels.pixels(); ++i) {
    const std::int32_t cls = labels.data[static_cast<std::size_t>(i)];
    if (cls == kVoidClass) continue;
    auto [it, fresh] = by_class.try_emplace(cls);
    if (fresh) {
      it->second.instance_id = cls;
      it->second.class_id = cls;
    }
    it->second.pixels.push_back(i);
  }
  std::vector<InstancePixels> out;
  out.reserve(by_class.size());
  for (auto& [cls, cluster] : by_class) out.push_back(std::move(cluster));
  return out;
}

}  // namespace

std::pair<PixelFields, SemanticState> init_fields(const Scene& scene,
                                                  const TrainConfig& config) {
  if (config.dim < 2)
    throw std::invalid_argument("init_fields: dim must be at least 2");
  if (config.sigma_init <= 0.0 || config.sigma_spatial_init <= 0.0)
    throw std::invalid_argument("init_fields: bandwidth inits must be positive");
  const EmbeddingLayout layout = layout_for(config);
  const int H = scene.labels.height, W = scene.labels.width, D = config.dim;

  SplitMix64 rng(config.rng_seed);
  // Common start direction(s); all pixels begin in one tight cluster.
  std::vector<double> base(static_cast<std::size_t>(D));
  if (layout.is_split(D)) {
    const auto u1 = random_unit(rng, layout.sem_dim());
    const auto u2 = random_unit(rng, layout.ins_dim());
    std::copy(u1.begin(), u1.end(), base.begin() + layout.sem_begin);
    std::copy(u2.begin(), u2.end(), base.begin() + layout.ins_begin);
  } else {
    const auto u = random_unit(rng, D);
    std::copy(u.begin(), u.end(), base.begin());
  }

  PixelFields fields;
  fields.e = FieldGrid::zeros(H, W, D);
  fields.sigma = FieldGrid::filled(H, W, 1, config.sigma_init);
  fields.sigma_spatial = FieldGrid::filled(H, W, 1, config.sigma_spatial_init);
  fields.seed = FieldGrid::filled(H, W, 1, 0.5);
  for (int i = 0; i < fields.pixels(); ++i) {
    auto row = fields.e.pixel(i);
    for (int d = 0; d < D; ++d)
      row[static_cast<std::size_t>(d)] =
          base[static_cast<std::size_t>(d)] +
          config.init_noise * rng.next_gaussian();
  }
  project_embeddings(fields.e, layout);

  SemanticState state;
  state.num_classes = scene.catalog.size();
  state.dim = layout.sem_dim();
  state.sigma.assign(static_cast<std::size_t>(state.num_classes),
                     config.sigma_init);
  if (config.anchor_init == AnchorInit::Thomson) {
    ThomsonConfig tc;
    tc.k = state.num_classes;
    tc.d = state.dim;
    tc.steps = 1500;
    tc.rng_seed = rng.next_u64();
    state.mu = thomson_init(tc);
  } else {
    state.mu.resize(static_cast<std::size_t>(state.num_classes) * state.dim);
    for (int k = 0; k < state.num_classes; ++k) {
      const auto u = random_unit(rng, state.dim);
      std::copy(u.begin(), u.end(), state.row(k).begin());
    }
  }
  return {std::move(fields), std::move(state)};
}

namespace {

struct StepLoss {
  LossReport report;
  FieldGrid grad_e, grad_sigma, grad_sigma_spatial, grad_seed;
  std::vector<double> grad_mu, grad_sigma_sem;
};

StepLoss variant_loss(const PixelFields& fields, const Scene& scene,
                      const SemanticState& state,
                      const EmbeddingLayout& layout,
                      const TrainConfig& config) {
  StepLoss out;
  if (config.variant == LossVariant::Hierarchical ||
      config.variant == LossVariant::SplitEmbedding) {
    TotalLossResult t =
        total_loss(fields, scene.labels, scene.instances, state,
                   scene.catalog, layout, config.loss);
    out.report = t.report;
    out.grad_e = std::move(t.grad_e);
    out.grad_sigma = std::move(t.grad_sigma);
    out.grad_sigma_spatial = std::move(t.grad_sigma_spatial);
    out.grad_seed = std::move(t.grad_seed);
    out.grad_mu = std::move(t.grad_mu);
    out.grad_sigma_sem = std::move(t.grad_sigma_sem);
    return out;
  }

  const std::vector<InstancePixels> insts =
      extract_instances(scene.labels, scene.instances);

  if (config.variant == LossVariant::CrossEntropy) {
    // The semantic surrogate swaps for cross-entropy; everything else stays.
    SemanticLossResult seg =
        semantic_cross_entropy(fields, scene.labels, state, layout);
    SegMeanLossResult sm =
        seg_mean_loss(fields, scene.labels, state, layout);
    InstanceLossResult ins =
        instance_loss(fields, scene.labels, insts, layout, config.loss);
    InsVarLossResult iv = ins_var_loss(fields, insts, config.loss.gamma);
    SeedLossResult sd =
        seed_loss(fields, scene.labels, insts, scene.catalog, layout);
    out.report = {seg.loss,
                  sm.loss,
                  ins.loss,
                  iv.loss,
                  sd.loss,
                  seg.loss + sm.loss + ins.loss + iv.loss + sd.loss,
                  ins.instances};
    out.grad_e = std::move(ins.grad_e);
    for (std::size_t i = 0; i < out.grad_e.data.size(); ++i)
      out.grad_e.data[i] += seg.grad_e.data[i];
    out.grad_sigma = std::move(ins.grad_sigma);
    for (std::size_t i = 0; i < out.grad_sigma.data.size(); ++i)
      out.grad_sigma.data[i] += iv.grad_sigma.data[i];
    out.grad_sigma_spatial = std::move(ins.grad_sigma_spatial);
    for (std::size_t i = 0; i < out.grad_sigma_spatial.data.size(); ++i)
      out.grad_sigma_spatial.data[i] += iv.grad_sigma_spatial.data[i];
    out.grad_seed = std::move(sd.grad_seed);
    out.grad_mu = std::move(sm.grad_mu);
    out.grad_sigma_sem = std::move(seg.grad_sigma_sem);
    return out;
  }

  // Associative-embedding baseline: pull/push at the instance level and,
  // with wider margins, at the class level; seed and bandwidth terms stay.
  // Anchors are not trained (they are refit from class means afterwards).
  AeLossResult ins_ae =
      ae_loss(fields.e, insts, config.ae_pull, config.ae_push);
  AeLossResult sem_ae = ae_loss(fields.e, class_clusters(scene.labels),
                                config.ae_sem_pull, config.ae_sem_push);
  InsVarLossResult iv = ins_var_loss(fields, insts, config.loss.gamma);
  SeedLossResult sd =
      seed_loss(fields, scene.labels, insts, scene.catalog, layout);
  out.report.seg = sem_ae.loss;
  out.report.seg_mean = 0.0;
  out.report.ins = ins_ae.loss;
  out.report.ins_var = iv.loss;
  out.report.seed = sd.loss;
  out.report.total = sem_ae.loss + ins_ae.loss + iv.loss + sd.loss;
  out.report.instances = static_cast<int>(insts.size());
  out.grad_e = std::move(ins_ae.grad_e);
  for (std::size_t i = 0; i < out.grad_e.data.size(); ++i)
    out.grad_e.data[i] += sem_ae.grad_e.data[i];
  out.grad_sigma = std::move(iv.grad_sigma);
  out.grad_sigma_spatial = std::move(iv.grad_sigma_spatial);
  out.grad_seed = std::move(sd.grad_seed);
  out.grad_mu.assign(state.mu.size(), 0.0);
  out.grad_sigma_sem.assign(state.sigma.size(), 0.0);
  return out;
}

}  // namespace

TrainResult train(const Scene& scene, const TrainConfig& config) {
  if (config.steps < 0) throw std::invalid_argument("train: steps < 0");
  if (config.log_every < 1)
    throw std::invalid_argument("train: log_every must be at least 1");
  const EmbeddingLayout layout = layout_for(config);
  auto [fields, state] = init_fields(scene, config);
  const int P = fields.pixels();

  // Unconstrained parameters: embeddings renormalized after each step, log
  // bandwidths, seed logits, anchors reprojected to the sphere.
  std::vector<double> log_sigma(static_cast<std::size_t>(P),
                                std::log(config.sigma_init));
  std::vector<double> log_sigma_sp(static_cast<std::size_t>(P),
                                   std::log(config.sigma_spatial_init));
  std::vector<double> seed_logit(static_cast<std::size_t>(P), 0.0);
  std::vector<double> log_sigma_sem(state.sigma.size(),
                                    std::log(config.sigma_init));

  AdamState ad_e(fields.e.data.size()), ad_sigma(log_sigma.size()),
      ad_sp(log_sigma_sp.size()), ad_seed(seed_logit.size()),
      ad_mu(state.mu.size()), ad_sem(log_sigma_sem.size());

  TrainResult result;
  result.layout = layout;
  double initial_total = 0.0;

  std::vector<double> g_sigma(log_sigma.size()), g_sp(log_sigma_sp.size()),
      g_seed(seed_logit.size()), g_sem(log_sigma_sem.size());
  for (int step = 0; step <= config.steps; ++step) {
    StepLoss sl = variant_loss(fields, scene, state, layout, config);
    if (step == 0) initial_total = sl.report.total;
    if (step % config.log_every == 0 || step == config.steps)
      result.curve.push_back({step, sl.report});
    if (initial_total > 0.0 &&
        sl.report.total > config.divergence_factor * initial_total)
      throw std::runtime_error(
          "train: diverged at step " + std::to_string(step) + " (total " +
          std::to_string(sl.report.total) + " vs initial " +
          std::to_string(initial_total) + "); lower step_size");
    if (step == config.steps) break;  // final losses logged, no more updates

    // Chain rules into the unconstrained parameters.
    const int t = step + 1;
    for (int i = 0; i < P; ++i) {
      const std::size_t ii = static_cast<std::size_t>(i);
      g_sigma[ii] = sl.grad_sigma.data[ii] * fields.sigma.data[ii];
      g_sp[ii] = sl.grad_sigma_spatial.data[ii] * fields.sigma_spatial.data[ii];
      const double s = fields.seed.data[ii];
      g_seed[ii] = sl.grad_seed.data[ii] * s * (1.0 - s);
    }
    for (std::size_t k = 0; k < log_sigma_sem.size(); ++k)
      g_sem[k] = sl.grad_sigma_sem[k] * state.sigma[k];

    adam_step(fields.e.data, sl.grad_e.data, ad_e, config, t);
    adam_step(log_sigma, g_sigma, ad_sigma, config, t);
    adam_step(log_sigma_sp, g_sp, ad_sp, config, t);
    adam_step(seed_logit, g_seed, ad_seed, config, t);
    adam_step(state.mu, sl.grad_mu, ad_mu, config, t);
    adam_step(log_sigma_sem, g_sem, ad_sem, config, t,
              config.sigma_sem_lr_scale);

    project_embeddings(fields.e, layout);
    project_anchors(state);
    for (int i = 0; i < P; ++i) {
      const std::size_t ii = static_cast<std::size_t>(i);
      fields.sigma.data[ii] = std::exp(log_sigma[ii]);
      fields.sigma_spatial.data[ii] = std::exp(log_sigma_sp[ii]);
      fields.seed.data[ii] = sigmoid(seed_logit[ii]);
    }
    for (std::size_t k = 0; k < log_sigma_sem.size(); ++k)
      state.sigma[k] = std::exp(log_sigma_sem[k]);
  }

  if (config.variant == LossVariant::AeBaseline) {
    // Anchors were never trained; fit them to the final class means so the
    // decoder's semantic head has something faithful to work with.
    std::vector<InstancePixels> clusters = class_clusters(scene.labels);
    for (const auto& cl : clusters) {
      std::vector<double> mean = mean_embedding(fields.e, cl.pixels);
      if (norm(mean) > 1e-12) {
        normalize(mean);
        std::copy(mean.begin(), mean.end(), state.row(cl.class_id).begin());
      }
    }
  }

  result.fields = std::move(fields);
  result.state = std::move(state);
  return result;
}

std::vector<InstanceHierarchy> hierarchy_stats(const FieldGrid& e,
                                               const LabelMap& labels,
                                               const InstanceMap& instances) {
  const std::vector<InstancePixels> insts =
      extract_instances(labels, instances);
  const int D = e.channels;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // Sufficient statistics: embedding sums per instance, per class, overall.
  std::map<std::int32_t, std::vector<double>> class_sum;
  std::map<std::int32_t, long long> class_count;
  std::vector<double> all_sum(static_cast<std::size_t>(D), 0.0);
  long long all_count = 0;
  for (int i = 0; i < labels.pixels(); ++i) {
    const std::int32_t cls = labels.data[static_cast<std::size_t>(i)];
    if (cls == kVoidClass) continue;
    auto [it, fresh] = class_sum.try_emplace(
        cls, std::vector<double>(static_cast<std::size_t>(D), 0.0));
    const auto v = e.pixel(i);
    for (int d = 0; d < D; ++d) {
      it->second[static_cast<std::size_t>(d)] += v[static_cast<std::size_t>(d)];
      all_sum[static_cast<std::size_t>(d)] += v[static_cast<std::size_t>(d)];
    }
    ++class_count[cls];
    ++all_count;
  }

  std::vector<InstanceHierarchy> out;
  for (const auto& inst : insts) {
    InstanceHierarchy h;
    h.instance_id = inst.instance_id;
    const double n = static_cast<double>(inst.pixels.size());
    std::vector<double> s(static_cast<std::size_t>(D), 0.0);
    double sq = 0.0;  // sum of |e_i|^2, not assumed exactly 1
    for (int idx : inst.pixels) {
      const auto v = e.pixel(idx);
      for (int d = 0; d < D; ++d)
        s[static_cast<std::size_t>(d)] += v[static_cast<std::size_t>(d)];
      sq += squared_norm(v);
    }
    // mean over unordered pairs of (1 - e_i . e_j):
    // sum_{i != j} e_i . e_j = |S|^2 - sum |e_i|^2
    h.intra_instance =
        n < 2 ? nan : 1.0 - (squared_norm(s) - sq) / (n * (n - 1.0));

    const auto& cs = class_sum.at(inst.class_id);
    const double cn = static_cast<double>(class_count.at(inst.class_id));
    const double other_n = cn - n;
    if (other_n < 0.5) {
      h.same_class = nan;
    } else {
      double cross = 0.0;
      for (int d = 0; d < D; ++d)
        cross += s[static_cast<std::size_t>(d)] *
                 (cs[static_cast<std::size_t>(d)] - s[static_cast<std::size_t>(d)]);
      h.same_class = 1.0 - cross / (n * other_n);
    }

    const double rest_n = static_cast<double>(all_count) - cn;
    if (rest_n < 0.5) {
      h.other_class = nan;
    } else {
      double cross = 0.0;
      for (int d = 0; d < D; ++d)
        cross += s[static_cast<std::size_t>(d)] *
                 (all_sum[static_cast<std::size_t>(d)] -
                  cs[static_cast<std::size_t>(d)]);
      h.other_class = 1.0 - cross / (n * rest_n);
    }
    out.push_back(h);
  }
  return out;
}

PqResult evaluate_toy(const PixelFields& fields, const SemanticState& state,
                      const Scene& scene, const DecoderConfig& config) {
  const PanopticMap pred = decode(fields, state, scene.catalog, config);
  const PanopticMap truth =
      panoptic_from_truth(scene.labels, scene.instances, scene.catalog);
  return panoptic_quality(pred, truth, scene.catalog);
}

}  // namespace hle
