#include "hle/embed.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "hle/numeric.hpp"

namespace hle {

EmbeddingLayout EmbeddingLayout::split(int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument(
        "EmbeddingLayout::split: dim must be even and >= 2");
  return {0, dim / 2, dim / 2, dim};
}

EmbeddingLayout infer_layout(int field_dim, int state_dim) {
  if (state_dim == field_dim) return EmbeddingLayout::full(field_dim);
  if (state_dim * 2 == field_dim) return EmbeddingLayout::split(field_dim);
  throw std::invalid_argument(
      "infer_layout: semantic anchors of width " + std::to_string(state_dim) +
      " do not match an embedding field of width " +
      std::to_string(field_dim));
}

double p_kernel(std::span<const double> e, std::span<const double> mu,
                double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("p_kernel: sigma <= 0");
  return std::exp(-cosine_distance(e, mu) / (2.0 * sigma * sigma));
}

double phi_kernel(std::span<const double> e, std::array<double, 2> rho,
                  std::span<const double> mu, std::array<double, 2> rho_c,
                  double sigma, double sigma_spatial) {
  if (sigma <= 0.0 || sigma_spatial <= 0.0)
    throw std::invalid_argument("phi_kernel: bandwidths must be positive");
  const double dx = rho[0] - rho_c[0];
  const double dy = rho[1] - rho_c[1];
  const double sq = dx * dx + dy * dy;
  return std::exp(-cosine_distance(e, mu) / (2.0 * sigma * sigma) -
                  sq / (2.0 * sigma_spatial * sigma_spatial));
}

std::vector<double> psi_scores(std::span<const double> e_sem,
                               const SemanticState& state) {
  const int C = state.num_classes;
  if (C <= 0) throw std::invalid_argument("psi_scores: empty state");
  std::vector<double> a(static_cast<std::size_t>(C));
  for (int k = 0; k < C; ++k) {
    const double s = state.sigma[static_cast<std::size_t>(k)];
    if (s <= 0.0) throw std::invalid_argument("psi_scores: sigma <= 0");
    a[static_cast<std::size_t>(k)] =
        -cosine_distance(e_sem, state.row(k)) / (2.0 * s * s);
  }
  const double m = *std::max_element(a.begin(), a.end());
  double denom = 0.0;
  for (double& v : a) {
    v = std::exp(v - m);
    denom += v;
  }
  for (double& v : a) v /= denom;
  return a;
}

InstanceStats instance_stats(const PixelFields& fields,
                             std::span<const int> pixels,
                             const EmbeddingLayout& layout) {
  if (pixels.empty())
    throw std::invalid_argument("instance_stats: empty pixel list");
  InstanceStats st;
  st.mu.assign(static_cast<std::size_t>(layout.ins_dim()), 0.0);
  const int W = fields.width();
  for (int idx : pixels) {
    auto e = layout.ins(fields.e.pixel(idx));
    for (int d = 0; d < layout.ins_dim(); ++d)
      st.mu[static_cast<std::size_t>(d)] += e[static_cast<std::size_t>(d)];
    const auto rho =
        pixel_position(idx / W, idx % W, fields.height(), fields.width());
    st.rho[0] += rho[0];
    st.rho[1] += rho[1];
    st.sigma += fields.sigma.data[static_cast<std::size_t>(idx)];
    st.sigma_spatial +=
        fields.sigma_spatial.data[static_cast<std::size_t>(idx)];
  }
  const double inv = 1.0 / static_cast<double>(pixels.size());
  for (double& v : st.mu) v *= inv;
  st.rho[0] *= inv;
  st.rho[1] *= inv;
  st.sigma *= inv;
  st.sigma_spatial *= inv;
  return st;
}

namespace {

void check_field_shapes(const PixelFields& fields, const LabelMap& labels,
                        const char* who) {
  if (fields.e.height != labels.height || fields.e.width != labels.width)
    throw std::invalid_argument(std::string(who) +
                                ": fields and labels shapes differ");
  if (fields.sigma.channels != 1 || fields.sigma_spatial.channels != 1 ||
      fields.seed.channels != 1)
    throw std::invalid_argument(std::string(who) +
                                ": bandwidth/seed grids must be 1-channel");
}

/// Support pixels for one instance: the whole non-void image, or the
/// instance bounding box padded by `margin` (minus void).
std::vector<int> instance_support(const LabelMap& labels,
                                  const InstancePixels& inst,
                                  InstanceSupport mode, int margin) {
  std::vector<int> out;
  const int W = labels.width;
  if (mode == InstanceSupport::FullImage) {
    out.reserve(static_cast<std::size_t>(labels.pixels()));
    for (int i = 0; i < labels.pixels(); ++i)
      if (labels.data[i] != kVoidClass) out.push_back(i);
    return out;
  }
  int r0 = labels.height, r1 = -1, c0 = labels.width, c1 = -1;
  for (int idx : inst.pixels) {
    const int r = idx / W, c = idx % W;
    r0 = std::min(r0, r);
    r1 = std::max(r1, r);
    c0 = std::min(c0, c);
    c1 = std::max(c1, c);
  }
  r0 = std::max(0, r0 - margin);
  c0 = std::max(0, c0 - margin);
  r1 = std::min(labels.height - 1, r1 + margin);
  c1 = std::min(labels.width - 1, c1 + margin);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const int idx = r * W + c;
      if (labels.data[idx] != kVoidClass) out.push_back(idx);
    }
  return out;
}

}  // namespace

InstanceLossResult instance_loss(const PixelFields& fields,
                                 const LabelMap& labels,
                                 const std::vector<InstancePixels>& instances,
                                 const EmbeddingLayout& layout,
                                 const LossConfig& config) {
  check_field_shapes(fields, labels, "instance_loss");
  InstanceLossResult out;
  out.grad_e = FieldGrid::zeros(fields.height(), fields.width(), fields.dim());
  out.grad_sigma = FieldGrid::zeros(fields.height(), fields.width(), 1);
  out.grad_sigma_spatial =
      FieldGrid::zeros(fields.height(), fields.width(), 1);
  out.instances = static_cast<int>(instances.size());
  if (instances.empty()) return out;

  const int W = fields.width();
  const int di = layout.ins_dim();
  const double scale = 1.0 / static_cast<double>(instances.size());

  std::vector<int> shared_support;
  if (config.instance_support == InstanceSupport::FullImage)
    shared_support = instance_support(labels, instances.front(),
                                      InstanceSupport::FullImage, 0);

  std::vector<double> phi, dc, sq;
  std::vector<int> mask, box_support;
  for (const auto& inst : instances) {
    const InstanceStats st = instance_stats(fields, inst.pixels, layout);
    if (config.instance_support == InstanceSupport::BoundingBox)
      box_support = instance_support(labels, inst, config.instance_support,
                                     config.bbox_margin);
    const std::vector<int>& support =
        config.instance_support == InstanceSupport::FullImage ? shared_support
                                                              : box_support;
    const std::size_t n = support.size();
    phi.resize(n);
    dc.resize(n);
    sq.resize(n);
    mask.resize(n);
    const double s2 = 2.0 * st.sigma * st.sigma;
    const double sp2 = 2.0 * st.sigma_spatial * st.sigma_spatial;
    for (std::size_t k = 0; k < n; ++k) {
      const int idx = support[k];
      const auto e = layout.ins(fields.e.pixel(idx));
      dc[k] = cosine_distance(e, st.mu);
      const auto rho =
          pixel_position(idx / W, idx % W, fields.height(), fields.width());
      const double dx = rho[0] - st.rho[0], dy = rho[1] - st.rho[1];
      sq[k] = dx * dx + dy * dy;
      phi[k] = std::exp(-dc[k] / s2 - sq[k] / sp2);
      mask[k] = 0;
    }
    // Mark member pixels; support and inst.pixels are both sorted ascending.
    for (std::size_t k = 0, j = 0; k < n && j < inst.pixels.size(); ++k) {
      while (j < inst.pixels.size() && inst.pixels[j] < support[k]) ++j;
      if (j < inst.pixels.size() && inst.pixels[j] == support[k]) mask[k] = 1;
    }

    const BinaryLossResult bl = lovasz_binary(phi, mask);
    out.loss += bl.loss * scale;

    // Backprop through phi: the direct pixel path and the pooled-mean paths.
    std::vector<double> mean_e_acc(static_cast<std::size_t>(di), 0.0);
    double mean_sigma_acc = 0.0, mean_sp_acc = 0.0;
    const double sig3 = st.sigma * st.sigma * st.sigma;
    const double sp3 =
        st.sigma_spatial * st.sigma_spatial * st.sigma_spatial;
    for (std::size_t k = 0; k < n; ++k) {
      const double common = bl.grad[k] * scale * phi[k];
      if (common == 0.0) continue;
      const int idx = support[k];
      const auto e = layout.ins(fields.e.pixel(idx));
      auto ge = out.grad_e.pixel(idx);
      for (int d = 0; d < di; ++d) {
        ge[static_cast<std::size_t>(layout.ins_begin + d)] +=
            common * st.mu[static_cast<std::size_t>(d)] / s2;
        mean_e_acc[static_cast<std::size_t>(d)] +=
            common * e[static_cast<std::size_t>(d)] / s2;
      }
      mean_sigma_acc += common * dc[k] / sig3;
      mean_sp_acc += common * sq[k] / sp3;
    }
    const double inv_m = 1.0 / static_cast<double>(inst.pixels.size());
    for (int idx : inst.pixels) {
      auto ge = out.grad_e.pixel(idx);
      for (int d = 0; d < di; ++d)
        ge[static_cast<std::size_t>(layout.ins_begin + d)] +=
            mean_e_acc[static_cast<std::size_t>(d)] * inv_m;
      out.grad_sigma.data[static_cast<std::size_t>(idx)] +=
          mean_sigma_acc * inv_m;
      out.grad_sigma_spatial.data[static_cast<std::size_t>(idx)] +=
          mean_sp_acc * inv_m;
    }
  }
  return out;
}

namespace {

/// Shared semantic machinery: logits a_ik = -d_cos(e_i, mu_k)/(2 sigma_k^2)
/// and the softmax psi over them, for every pixel.
struct SemanticForward {
  std::vector<double> psi;     // n x C
  std::vector<double> logits;  // n x C (needed for cross-entropy)
};

SemanticForward semantic_forward(const PixelFields& fields,
                                 const SemanticState& state,
                                 const EmbeddingLayout& layout) {
  if (state.dim != layout.sem_dim())
    throw std::invalid_argument(
        "semantic loss: anchor width does not match the layout");
  const int n = fields.pixels();
  const int C = state.num_classes;
  SemanticForward fw;
  fw.psi.resize(static_cast<std::size_t>(n) * C);
  fw.logits.resize(static_cast<std::size_t>(n) * C);
  for (int i = 0; i < n; ++i) {
    const auto e = layout.sem(fields.e.pixel(i));
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < C; ++k) {
      const double s = state.sigma[static_cast<std::size_t>(k)];
      if (s <= 0.0)
        throw std::invalid_argument("semantic loss: sigma <= 0");
      const double a = -cosine_distance(e, state.row(k)) / (2.0 * s * s);
      fw.logits[static_cast<std::size_t>(i) * C + k] = a;
      m = std::max(m, a);
    }
    double denom = 0.0;
    for (int k = 0; k < C; ++k) {
      const double v =
          std::exp(fw.logits[static_cast<std::size_t>(i) * C + k] - m);
      fw.psi[static_cast<std::size_t>(i) * C + k] = v;
      denom += v;
    }
    for (int k = 0; k < C; ++k)
      fw.psi[static_cast<std::size_t>(i) * C + k] /= denom;
  }
  return fw;
}

/// Maps d loss / d logits into gradients on the pixel embeddings and the
/// class bandwidths. The anchors are fixed inputs here.
void apply_logit_grads(const PixelFields& fields, const SemanticState& state,
                       const EmbeddingLayout& layout,
                       std::span<const double> da, FieldGrid& grad_e,
                       std::vector<double>& grad_sigma_sem) {
  const int n = fields.pixels();
  const int C = state.num_classes;
  for (int i = 0; i < n; ++i) {
    const auto e = layout.sem(fields.e.pixel(i));
    auto ge = grad_e.pixel(i);
    for (int k = 0; k < C; ++k) {
      const double g = da[static_cast<std::size_t>(i) * C + k];
      if (g == 0.0) continue;
      const double s = state.sigma[static_cast<std::size_t>(k)];
      const auto mu = state.row(k);
      const double s2 = 2.0 * s * s;
      for (int d = 0; d < layout.sem_dim(); ++d)
        ge[static_cast<std::size_t>(layout.sem_begin + d)] +=
            g * mu[static_cast<std::size_t>(d)] / s2;
      grad_sigma_sem[static_cast<std::size_t>(k)] +=
          g * cosine_distance(e, mu) / (s * s * s);
    }
  }
}

}  // namespace

SemanticLossResult semantic_loss(const PixelFields& fields,
                                 const LabelMap& labels,
                                 const SemanticState& state,
                                 const EmbeddingLayout& layout,
                                 const LossConfig& config) {
  check_field_shapes(fields, labels, "semantic_loss");
  const int n = fields.pixels();
  const int C = state.num_classes;
  SemanticLossResult out;
  out.grad_e = FieldGrid::zeros(fields.height(), fields.width(), fields.dim());
  out.grad_sigma_sem.assign(static_cast<std::size_t>(C), 0.0);

  const SemanticForward fw = semantic_forward(fields, state, layout);
  const SoftmaxLossResult sm =
      lovasz_softmax(fw.psi, labels.data, C, config.softmax_classes);
  out.loss = sm.loss;

  // d loss / d logit_k = psi_k * (d loss/d psi_k - sum_j d loss/d psi_j psi_j)
  std::vector<double> da(static_cast<std::size_t>(n) * C, 0.0);
  for (int i = 0; i < n; ++i) {
    double inner = 0.0;
    for (int k = 0; k < C; ++k)
      inner += sm.grad[static_cast<std::size_t>(i) * C + k] *
               fw.psi[static_cast<std::size_t>(i) * C + k];
    for (int k = 0; k < C; ++k) {
      const std::size_t ik = static_cast<std::size_t>(i) * C + k;
      da[ik] = fw.psi[ik] * (sm.grad[ik] - inner);
    }
  }
  apply_logit_grads(fields, state, layout, da, out.grad_e,
                    out.grad_sigma_sem);
  return out;
}

SemanticLossResult semantic_cross_entropy(const PixelFields& fields,
                                          const LabelMap& labels,
                                          const SemanticState& state,
                                          const EmbeddingLayout& layout) {
  check_field_shapes(fields, labels, "semantic_cross_entropy");
  const int n = fields.pixels();
  const int C = state.num_classes;
  SemanticLossResult out;
  out.grad_e = FieldGrid::zeros(fields.height(), fields.width(), fields.dim());
  out.grad_sigma_sem.assign(static_cast<std::size_t>(C), 0.0);

  std::vector<int> valid;
  for (int i = 0; i < n; ++i) {
    const std::int32_t l = labels.data[static_cast<std::size_t>(i)];
    if (l == kVoidClass) continue;
    if (l < 0 || l >= C)
      throw std::invalid_argument("semantic_cross_entropy: label " +
                                  std::to_string(l) + " outside the catalog");
    valid.push_back(i);
  }
  if (valid.empty()) return out;

  const SemanticForward fw = semantic_forward(fields, state, layout);
  const double inv = 1.0 / static_cast<double>(valid.size());
  std::vector<double> da(static_cast<std::size_t>(n) * C, 0.0);
  double loss = 0.0;
  for (int i : valid) {
    const std::int32_t t = labels.data[static_cast<std::size_t>(i)];
    // log psi_t straight from the logits, immune to underflow
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < C; ++k)
      m = std::max(m, fw.logits[static_cast<std::size_t>(i) * C + k]);
    double lse = 0.0;
    for (int k = 0; k < C; ++k)
      lse += std::exp(fw.logits[static_cast<std::size_t>(i) * C + k] - m);
    lse = m + std::log(lse);
    loss -= fw.logits[static_cast<std::size_t>(i) * C + t] - lse;
    for (int k = 0; k < C; ++k) {
      const std::size_t ik = static_cast<std::size_t>(i) * C + k;
      da[ik] = (fw.psi[ik] - (k == t ? 1.0 : 0.0)) * inv;
    }
  }
  out.loss = loss * inv;
  apply_logit_grads(fields, state, layout, da, out.grad_e,
                    out.grad_sigma_sem);
  return out;
}

SeedLossResult seed_loss(const PixelFields& fields, const LabelMap& labels,
                         const std::vector<InstancePixels>& instances,
                         const ClassCatalog& catalog,
                         const EmbeddingLayout& layout) {
  check_field_shapes(fields, labels, "seed_loss");
  SeedLossResult out;
  out.grad_seed = FieldGrid::zeros(fields.height(), fields.width(), 1);

  const int W = fields.width();
  // (pixel, target) pairs; each pixel appears at most once because instance
  // pixels sit on thing classes and the second pass only takes stuff.
  std::vector<std::pair<int, double>> targets;
  for (const auto& inst : instances) {
    const InstanceStats st = instance_stats(fields, inst.pixels, layout);
    for (int idx : inst.pixels) {
      const auto rho =
          pixel_position(idx / W, idx % W, fields.height(), fields.width());
      const double phi = phi_kernel(layout.ins(fields.e.pixel(idx)), rho,
                                    st.mu, st.rho, st.sigma,
                                    st.sigma_spatial);
      targets.emplace_back(idx, phi);
    }
  }
  for (int i = 0; i < fields.pixels(); ++i) {
    const std::int32_t l = labels.data[static_cast<std::size_t>(i)];
    if (l == kVoidClass) continue;
    if (catalog.is_stuff(l)) targets.emplace_back(i, 0.0);
  }
  out.support = static_cast<int>(targets.size());
  if (targets.empty()) return out;

  const double inv = 1.0 / static_cast<double>(targets.size());
  for (const auto& [idx, target] : targets) {
    const double diff =
        fields.seed.data[static_cast<std::size_t>(idx)] - target;
    out.loss += diff * diff * inv;
    out.grad_seed.data[static_cast<std::size_t>(idx)] +=
        2.0 * diff * inv;
  }
  return out;
}

InsVarLossResult ins_var_loss(const PixelFields& fields,
                              const std::vector<InstancePixels>& instances,
                              double gamma) {
  InsVarLossResult out;
  out.grad_sigma = FieldGrid::zeros(fields.height(), fields.width(), 1);
  out.grad_sigma_spatial =
      FieldGrid::zeros(fields.height(), fields.width(), 1);
  int total = 0;
  for (const auto& inst : instances)
    total += static_cast<int>(inst.pixels.size());
  out.support = total;
  if (total == 0) return out;

  const double inv = 1.0 / static_cast<double>(total);
  for (const auto& inst : instances) {
    double mean_sigma = 0.0, mean_sp = 0.0;
    for (int idx : inst.pixels) {
      mean_sigma += fields.sigma.data[static_cast<std::size_t>(idx)];
      mean_sp += fields.sigma_spatial.data[static_cast<std::size_t>(idx)];
    }
    mean_sigma /= static_cast<double>(inst.pixels.size());
    mean_sp /= static_cast<double>(inst.pixels.size());
    for (int idx : inst.pixels) {
      const double ds =
          fields.sigma.data[static_cast<std::size_t>(idx)] - mean_sigma;
      const double dp =
          fields.sigma_spatial.data[static_cast<std::size_t>(idx)] - mean_sp;
      out.loss += gamma * (ds * ds + dp * dp) * inv;
      // the per-instance means are fixed targets
      out.grad_sigma.data[static_cast<std::size_t>(idx)] +=
          gamma * 2.0 * ds * inv;
      out.grad_sigma_spatial.data[static_cast<std::size_t>(idx)] +=
          gamma * 2.0 * dp * inv;
    }
  }
  return out;
}

SegMeanLossResult seg_mean_loss(const PixelFields& fields,
                                const LabelMap& labels,
                                const SemanticState& state,
                                const EmbeddingLayout& layout) {
  check_field_shapes(fields, labels, "seg_mean_loss");
  if (state.dim != layout.sem_dim())
    throw std::invalid_argument(
        "seg_mean_loss: anchor width does not match the layout");
  const int C = state.num_classes;
  SegMeanLossResult out;
  out.grad_mu.assign(static_cast<std::size_t>(C) * state.dim, 0.0);

  std::vector<std::vector<double>> sums(
      static_cast<std::size_t>(C),
      std::vector<double>(static_cast<std::size_t>(state.dim), 0.0));
  std::vector<int> counts(static_cast<std::size_t>(C), 0);
  for (int i = 0; i < fields.pixels(); ++i) {
    const std::int32_t l = labels.data[static_cast<std::size_t>(i)];
    if (l == kVoidClass) continue;
    if (l < 0 || l >= C)
      throw std::invalid_argument("seg_mean_loss: label " +
                                  std::to_string(l) + " outside the catalog");
    const auto e = layout.sem(fields.e.pixel(i));
    for (int d = 0; d < state.dim; ++d)
      sums[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)] +=
          e[static_cast<std::size_t>(d)];
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int k = 0; k < C; ++k)
    if (counts[static_cast<std::size_t>(k)] > 0) ++out.present;
  if (out.present == 0) return out;

  const double inv = 1.0 / static_cast<double>(out.present);
  for (int k = 0; k < C; ++k) {
    const int cnt = counts[static_cast<std::size_t>(k)];
    if (cnt == 0) continue;
    const auto mu = state.row(k);
    for (int d = 0; d < state.dim; ++d) {
      const double mean =
          sums[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] /
          static_cast<double>(cnt);
      const double diff = mu[static_cast<std::size_t>(d)] - mean;
      out.loss += diff * diff * inv;
      out.grad_mu[static_cast<std::size_t>(k) * state.dim + d] =
          2.0 * diff * inv;
    }
  }
  return out;
}

TotalLossResult total_loss(const PixelFields& fields, const LabelMap& labels,
                           const InstanceMap& instances,
                           const SemanticState& state,
                           const ClassCatalog& catalog,
                           const EmbeddingLayout& layout,
                           const LossConfig& config) {
  const std::vector<InstancePixels> insts =
      extract_instances(labels, instances);

  TotalLossResult out;
  const SemanticLossResult seg =
      semantic_loss(fields, labels, state, layout, config);
  const SegMeanLossResult sm = seg_mean_loss(fields, labels, state, layout);
  InstanceLossResult ins =
      instance_loss(fields, labels, insts, layout, config);
  InsVarLossResult iv = ins_var_loss(fields, insts, config.gamma);
  SeedLossResult sd = seed_loss(fields, labels, insts, catalog, layout);

  out.report.seg = seg.loss;
  out.report.seg_mean = sm.loss;
  out.report.ins = ins.loss;
  out.report.ins_var = iv.loss;
  out.report.seed = sd.loss;
  out.report.total = seg.loss + sm.loss + ins.loss + iv.loss + sd.loss;
  out.report.instances = ins.instances;

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
  out.grad_mu = sm.grad_mu;
  out.grad_sigma_sem = seg.grad_sigma_sem;
  return out;
}

AeLossResult ae_loss(const FieldGrid& e,
                     const std::vector<InstancePixels>& clusters,
                     double delta_pull, double delta_push) {
  AeLossResult out;
  out.grad_e = FieldGrid::zeros(e.height, e.width, e.channels);
  const int L = static_cast<int>(clusters.size());
  if (L == 0) return out;
  const int D = e.channels;

  std::vector<std::vector<double>> means;
  means.reserve(static_cast<std::size_t>(L));
  for (const auto& cl : clusters) {
    if (cl.pixels.empty())
      throw std::invalid_argument("ae_loss: empty cluster");
    means.push_back(mean_embedding(e, cl.pixels));
  }

  const auto sgn = [](double x) {
    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  };

  // Pull: mean over clusters of mean over members of the hinged squared
  // L1 distance to the cluster mean. The mean depends on every member, so
  // each active hinge spreads a -1/N_l correction across the cluster.
  for (int l = 0; l < L; ++l) {
    const auto& cl = clusters[static_cast<std::size_t>(l)];
    const auto& mu = means[static_cast<std::size_t>(l)];
    const double nl = static_cast<double>(cl.pixels.size());
    const double w = 1.0 / (static_cast<double>(L) * nl);
    std::vector<double> mean_acc(static_cast<std::size_t>(D), 0.0);
    for (int idx : cl.pixels) {
      const auto v = e.pixel(idx);
      double dist = 0.0;
      for (int d = 0; d < D; ++d)
        dist += std::abs(v[static_cast<std::size_t>(d)] -
                         mu[static_cast<std::size_t>(d)]);
      const double h = dist - delta_pull;
      if (h <= 0.0) continue;
      out.pull += w * h * h;
      const double f = w * 2.0 * h;
      auto g = out.grad_e.pixel(idx);
      for (int d = 0; d < D; ++d) {
        const double s = sgn(v[static_cast<std::size_t>(d)] -
                             mu[static_cast<std::size_t>(d)]);
        g[static_cast<std::size_t>(d)] += f * s;
        mean_acc[static_cast<std::size_t>(d)] += f * s;
      }
    }
    for (int idx : cl.pixels) {
      auto g = out.grad_e.pixel(idx);
      for (int d = 0; d < D; ++d)
        g[static_cast<std::size_t>(d)] -=
            mean_acc[static_cast<std::size_t>(d)] / nl;
    }
  }

  // Push: ordered cluster pairs, so each unordered pair counts twice.
  if (L > 1) {
    const double w = 2.0 / (static_cast<double>(L) * (L - 1));
    for (int a = 0; a < L; ++a) {
      for (int b = a + 1; b < L; ++b) {
        const auto& ma = means[static_cast<std::size_t>(a)];
        const auto& mb = means[static_cast<std::size_t>(b)];
        double dist = 0.0;
        for (int d = 0; d < D; ++d)
          dist += std::abs(ma[static_cast<std::size_t>(d)] -
                           mb[static_cast<std::size_t>(d)]);
        const double h = delta_push - dist;
        if (h <= 0.0) continue;
        out.push += w * h * h;
        const double f = -w * 2.0 * h;  // d push / d dist
        const double na =
            static_cast<double>(clusters[static_cast<std::size_t>(a)]
                                    .pixels.size());
        const double nb =
            static_cast<double>(clusters[static_cast<std::size_t>(b)]
                                    .pixels.size());
        for (int d = 0; d < D; ++d) {
          const double s = sgn(ma[static_cast<std::size_t>(d)] -
                               mb[static_cast<std::size_t>(d)]);
          for (int idx : clusters[static_cast<std::size_t>(a)].pixels)
            out.grad_e.pixel(idx)[static_cast<std::size_t>(d)] += f * s / na;
          for (int idx : clusters[static_cast<std::size_t>(b)].pixels)
            out.grad_e.pixel(idx)[static_cast<std::size_t>(d)] -= f * s / nb;
        }
      }
    }
  }
  out.loss = out.pull + out.push;
  return out;
}

}  // namespace hle
