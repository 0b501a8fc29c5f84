#pragma once

// Direct optimization of the per-pixel fields and semantic anchors on a
// single synthetic scene -- no network, the pixels themselves are the
// parameters. Adam steps on unconstrained reparameterizations (log
// bandwidths, seed logits, renormalized embeddings) keep every constraint
// satisfied by construction.

#include <cstdint>
#include <vector>

#include "hle/decoder.hpp"
#include "hle/embed.hpp"
#include "hle/grid.hpp"
#include "hle/metrics.hpp"
#include "hle/synth.hpp"

namespace hle {

enum class LossVariant {
  Hierarchical,    // full objective, shared embedding sphere
  SplitEmbedding,  // semantic and instance kernels on separate half-spheres
  AeBaseline,      // associative-embedding pull/push at both levels
  CrossEntropy,    // per-pixel cross-entropy replaces the semantic surrogate
};

enum class AnchorInit { Thomson, Random };

struct TrainConfig {
  int steps = 2000;
  double step_size = 0.03;  // Adam learning rate
  double beta1 = 0.9, beta2 = 0.999, adam_epsilon = 1e-8;

  int dim = 12;
  AnchorInit anchor_init = AnchorInit::Thomson;
  double sigma_init = 0.3;
  double sigma_spatial_init = 0.3;
  // Noise reach around the common start vector. Too little and nearby
  // instances begin as one indistinguishable blob that can wander into the
  // wrong class basin as a unit; this much keeps the per-instance pooled
  // means apart from the first step.
  double init_noise = 0.25;
  // Class bandwidths learn slower than everything else: letting them race
  // ahead sharpens the class softmax until stragglers stop receiving
  // gradient at all (saturated scores underflow), freezing misclassified
  // pixels permanently.
  double sigma_sem_lr_scale = 0.1;
  std::uint64_t rng_seed = 1;

  LossVariant variant = LossVariant::Hierarchical;
  LossConfig loss;

  // associative-embedding margins (L1), instance and class level
  double ae_pull = 0.3, ae_push = 1.2;
  double ae_sem_pull = 0.6, ae_sem_push = 2.4;

  double divergence_factor = 10.0;  // abort when total exceeds this x initial
  int log_every = 10;               // curve sampling interval
};

struct CurveRow {
  int step = 0;
  LossReport report;
};

struct TrainResult {
  PixelFields fields;
  SemanticState state;
  EmbeddingLayout layout;
  std::vector<CurveRow> curve;
};

/// Seeded starting point: embeddings clustered around one random direction
/// (per layout block), bandwidths at their init values, seeds at 0.5,
/// anchors spread by the sphere initializer (or random).
std::pair<PixelFields, SemanticState> init_fields(const Scene& scene,
                                                  const TrainConfig& config);

/// Runs the configured variant. Deterministic for a fixed config. Throws
/// std::runtime_error with a diagnostic when the total loss diverges past
/// divergence_factor x its initial value.
TrainResult train(const Scene& scene, const TrainConfig& config);

/// Mean pairwise cosine distances around one instance: within it, to other
/// same-class instance pixels, and to non-void pixels of other classes.
/// Computed from sufficient statistics (embedding sums), so it stays cheap
/// on full images. Entries are NaN where a comparison set is empty
/// (single-pixel instance, lone instance of its class, ...).
struct InstanceHierarchy {
  std::int32_t instance_id = 0;
  double intra_instance = 0.0;
  double same_class = 0.0;
  double other_class = 0.0;
};
std::vector<InstanceHierarchy> hierarchy_stats(const FieldGrid& e,
                                               const LabelMap& labels,
                                               const InstanceMap& instances);

/// Decode the fields and score them against the scene's ground truth.
PqResult evaluate_toy(const PixelFields& fields, const SemanticState& state,
                      const Scene& scene, const DecoderConfig& config);

}  // namespace hle
