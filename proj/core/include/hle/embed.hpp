#pragma once

// Embedding model: per-pixel prediction fields, the spherical/spatial
// kernels, and the loss terms (with analytic gradients) that shape them.
//
// Conventions used throughout:
//   - embeddings live on the unit sphere; d_cos(a,b) = 1 - a.b in [0,2]
//   - pixel positions rho = ((col+0.5)/W, (row+0.5)/H) in [0,1]^2
//   - bandwidths sigma are strictly positive
//   - gradients are returned for the variables a term treats as free;
//     stop-gradient targets (seed targets, batch means, class anchors in the
//     semantic loss) deliberately receive none.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "hle/grid.hpp"
#include "hle/lovasz.hpp"

namespace hle {

/// Which embedding channels the semantic and instance kernels read. The
/// default ("full") aims both at all D channels; the split variant gives each
/// its own half-sphere.
struct EmbeddingLayout {
  int sem_begin = 0, sem_end = 0;
  int ins_begin = 0, ins_end = 0;

  static EmbeddingLayout full(int dim) { return {0, dim, 0, dim}; }
  static EmbeddingLayout split(int dim);  // first half semantic, second half instance

  int sem_dim() const { return sem_end - sem_begin; }
  int ins_dim() const { return ins_end - ins_begin; }
  bool is_split(int dim) const { return sem_dim() != dim || ins_dim() != dim; }

  std::span<const double> sem(std::span<const double> e) const {
    return e.subspan(static_cast<std::size_t>(sem_begin),
                     static_cast<std::size_t>(sem_dim()));
  }
  std::span<const double> ins(std::span<const double> e) const {
    return e.subspan(static_cast<std::size_t>(ins_begin),
                     static_cast<std::size_t>(ins_dim()));
  }
};

/// Infers the layout from the embedding field width and the semantic anchor
/// width: equal -> full/shared sphere; anchors half as wide -> split halves.
EmbeddingLayout infer_layout(int field_dim, int state_dim);

/// Per-pixel prediction fields. In the split layout each half of `e` is a
/// unit vector; otherwise the whole row is.
struct PixelFields {
  FieldGrid e;              // D channels
  FieldGrid sigma;          // 1 channel, embedding bandwidth
  FieldGrid sigma_spatial;  // 1 channel, spatial bandwidth
  FieldGrid seed;           // 1 channel, seediness in [0,1]

  int height() const { return e.height; }
  int width() const { return e.width; }
  int dim() const { return e.channels; }
  int pixels() const { return e.pixels(); }
};

/// Per-class semantic anchors: unit mean embeddings and bandwidths.
struct SemanticState {
  int num_classes = 0;
  int dim = 0;
  std::vector<double> mu;     // num_classes x dim, row-major, unit rows
  std::vector<double> sigma;  // num_classes

  std::span<double> row(int k) {
    return {mu.data() + static_cast<std::size_t>(k) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<const double> row(int k) const {
    return {mu.data() + static_cast<std::size_t>(k) * dim,
            static_cast<std::size_t>(dim)};
  }
};

/// Position of a pixel center in normalized [0,1]^2 coordinates (x, y).
inline std::array<double, 2> pixel_position(int row, int col, int height,
                                            int width) {
  return {(col + 0.5) / width, (row + 0.5) / height};
}

/// Spherical kernel p = exp(-d_cos(e, mu) / (2 sigma^2)).
double p_kernel(std::span<const double> e, std::span<const double> mu,
                double sigma);

/// Instance kernel phi = p * exp(-|rho - rho_c|^2 / (2 sigma_sp^2)).
double phi_kernel(std::span<const double> e, std::array<double, 2> rho,
                  std::span<const double> mu, std::array<double, 2> rho_c,
                  double sigma, double sigma_spatial);

/// Semantic scores psi_k = p_k / sum_c p_c over the catalog classes.
/// Computed in log space so extreme bandwidths cannot underflow to 0/0.
std::vector<double> psi_scores(std::span<const double> e_sem,
                               const SemanticState& state);

/// Per-instance pooled quantities: mean embedding over the instance-kernel
/// channels (not renormalized), centroid position, mean bandwidths.
struct InstanceStats {
  std::vector<double> mu;  // layout.ins_dim() entries
  std::array<double, 2> rho{0.0, 0.0};
  double sigma = 0.0;
  double sigma_spatial = 0.0;
};
InstanceStats instance_stats(const PixelFields& fields,
                             std::span<const int> pixels,
                             const EmbeddingLayout& layout);

enum class InstanceSupport { FullImage, BoundingBox };

struct LossConfig {
  double gamma = 10.0;  // weight of the bandwidth-variance term
  ClassAveraging softmax_classes = ClassAveraging::All;
  InstanceSupport instance_support = InstanceSupport::FullImage;
  int bbox_margin = 32;  // pixels of context in BoundingBox mode
};

// ---- individual loss terms ------------------------------------------------

struct InstanceLossResult {
  double loss = 0.0;  // mean over instances of the per-instance binary loss
  int instances = 0;
  FieldGrid grad_e, grad_sigma, grad_sigma_spatial;
};
/// Per-instance Lovasz hinge on phi against the instance mask, evaluated at
/// every non-void pixel (or a padded bounding box around the instance).
/// Pooled means are differentiated through; the centroid rho is not a free
/// variable (positions are fixed).
InstanceLossResult instance_loss(const PixelFields& fields,
                                 const LabelMap& labels,
                                 const std::vector<InstancePixels>& instances,
                                 const EmbeddingLayout& layout,
                                 const LossConfig& config);

struct SemanticLossResult {
  double loss = 0.0;
  FieldGrid grad_e;
  std::vector<double> grad_sigma_sem;  // per class
};
/// Lovasz-softmax on the psi scores at non-void pixels. Gradients flow to the
/// pixel embeddings and the class bandwidths; the class anchors mu_hat are
/// held fixed here (they are steered by seg_mean_loss instead).
SemanticLossResult semantic_loss(const PixelFields& fields,
                                 const LabelMap& labels,
                                 const SemanticState& state,
                                 const EmbeddingLayout& layout,
                                 const LossConfig& config);

/// Per-pixel cross-entropy -log psi_t on the same support; drop-in
/// replacement for semantic_loss in the ablation.
SemanticLossResult semantic_cross_entropy(const PixelFields& fields,
                                          const LabelMap& labels,
                                          const SemanticState& state,
                                          const EmbeddingLayout& layout);

struct SeedLossResult {
  double loss = 0.0;
  int support = 0;  // pixels entering the mean
  FieldGrid grad_seed;
};
/// Squared error regressing the seed map onto phi of the pixel's own
/// instance (target held fixed), and onto 0 on stuff pixels. Thing pixels
/// without an instance and void pixels are excluded.
SeedLossResult seed_loss(const PixelFields& fields, const LabelMap& labels,
                         const std::vector<InstancePixels>& instances,
                         const ClassCatalog& catalog,
                         const EmbeddingLayout& layout);

struct InsVarLossResult {
  double loss = 0.0;
  int support = 0;  // instance pixels
  FieldGrid grad_sigma, grad_sigma_spatial;
};
/// gamma-weighted pull of each instance pixel's bandwidths toward the
/// instance mean (mean held fixed): both sigma channels, summed squared
/// deviations over instance pixels, divided by their count.
InsVarLossResult ins_var_loss(const PixelFields& fields,
                              const std::vector<InstancePixels>& instances,
                              double gamma);

struct SegMeanLossResult {
  double loss = 0.0;
  int present = 0;  // classes entering the mean
  std::vector<double> grad_mu;  // num_classes x sem_dim
};
/// ||mu_hat_k - batch mean of class-k embeddings||^2, averaged over the
/// classes present in the image; the batch mean is the fixed target, so
/// gradients flow only to the anchors.
SegMeanLossResult seg_mean_loss(const PixelFields& fields,
                                const LabelMap& labels,
                                const SemanticState& state,
                                const EmbeddingLayout& layout);

// ---- combined objective ---------------------------------------------------

struct LossReport {
  double seg = 0.0, seg_mean = 0.0, ins = 0.0, ins_var = 0.0, seed = 0.0;
  double total = 0.0;  // seg + seg_mean + ins + ins_var + seed, in that order
  int instances = 0;
};

struct TotalLossResult {
  LossReport report;
  FieldGrid grad_e, grad_sigma, grad_sigma_spatial, grad_seed;
  std::vector<double> grad_mu;         // anchors
  std::vector<double> grad_sigma_sem;  // class bandwidths
};
/// Unweighted sum of the five terms; each term is averaged over its own
/// support before summation.
TotalLossResult total_loss(const PixelFields& fields, const LabelMap& labels,
                           const InstanceMap& instances,
                           const SemanticState& state,
                           const ClassCatalog& catalog,
                           const EmbeddingLayout& layout,
                           const LossConfig& config);

// ---- associative-embedding baseline ----------------------------------------

struct AeLossResult {
  double loss = 0.0, pull = 0.0, push = 0.0;
  FieldGrid grad_e;
};
/// Margin-based pull/push on L1 distances between embeddings and cluster
/// means: pull = mean over clusters/members of max(0, |e - mean| - d_pull)^2,
/// push = mean over ordered cluster pairs of max(0, d_push - |m_a - m_b|)^2.
/// Means are differentiated through (subgradients at the L1 kinks take the
/// sign convention sign(0) = 0).
AeLossResult ae_loss(const FieldGrid& e,
                     const std::vector<InstancePixels>& clusters,
                     double delta_pull, double delta_push);

}  // namespace hle
