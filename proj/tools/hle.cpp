// hle -- command-line front end for the hierarchical Lovasz embedding
// library: scene generation, sphere initialization, direct field training,
// panoptic decoding, evaluation, benchmarking, gradient checking and
// visualization. Diagnostics go to stderr; data goes to files or stdout.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "hle/bench.hpp"
#include "hle/decoder.hpp"
#include "hle/embed.hpp"
#include "hle/gradcheck.hpp"
#include "hle/grid.hpp"
#include "hle/io.hpp"
#include "hle/metrics.hpp"
#include "hle/synth.hpp"
#include "hle/thomson.hpp"
#include "hle/trainer.hpp"
#include "hle/viz.hpp"

namespace {

using namespace hle;
namespace fs = std::filesystem;

// ---- formatting -------------------------------------------------------------

/// Round-trippable decimal form; deterministic for identical inputs.
std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- strict scalar parsing --------------------------------------------------

[[noreturn]] void bad_value(const std::string& where, const std::string& raw,
                            const char* want) {
  throw std::runtime_error(where + ": expected " + want + ", got '" + raw +
                           "'");
}

std::string trimmed(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double(const std::string& raw, const std::string& where) {
  const std::string s = trimmed(raw);
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    bad_value(where, raw, "a number");
  }
  if (pos != s.size()) bad_value(where, raw, "a number");
  return v;
}

long long parse_ll(const std::string& raw, const std::string& where) {
  const std::string s = trimmed(raw);
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    bad_value(where, raw, "an integer");
  }
  if (pos != s.size()) bad_value(where, raw, "an integer");
  return v;
}

int parse_int(const std::string& raw, const std::string& where) {
  const long long v = parse_ll(raw, where);
  if (v < INT32_MIN || v > INT32_MAX) bad_value(where, raw, "a 32-bit integer");
  return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& raw, const std::string& where) {
  const std::string s = trimmed(raw);
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    bad_value(where, raw, "an unsigned integer");
  }
  if (pos != s.size() || s.empty() || s[0] == '-')
    bad_value(where, raw, "an unsigned integer");
  return v;
}

bool parse_bool(const std::string& raw, const std::string& where) {
  const std::string s = trimmed(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(where, raw, "a boolean (true/false)");
}

// ---- key=value config files -------------------------------------------------

/// Wraps a parsed `key = value` file: consumers take the keys they know,
/// then finish() rejects whatever is left so typos cannot pass silently.
class KvFile {
 public:
  KvFile() = default;
  explicit KvFile(const fs::path& path) : name_(path.string()) {
    for (auto& [k, v] : io::read_kv_config(path)) entries_[k] = v;
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::optional<std::string> take(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    std::string v = it->second;
    entries_.erase(it);
    return v;
  }

  void take_double(const std::string& key, double& out) {
    if (auto v = take(key)) out = parse_double(*v, where(key));
  }
  void take_int(const std::string& key, int& out) {
    if (auto v = take(key)) out = parse_int(*v, where(key));
  }
  void take_u64(const std::string& key, std::uint64_t& out) {
    if (auto v = take(key)) out = parse_u64(*v, where(key));
  }
  void take_bool(const std::string& key, bool& out) {
    if (auto v = take(key)) out = parse_bool(*v, where(key));
  }
  void take_string(const std::string& key, std::string& out) {
    if (auto v = take(key)) out = trimmed(*v);
  }

  std::string where(const std::string& key) const {
    return name_ + ": key '" + key + "'";
  }

  /// Throws if any key was never consumed (unknown keys are errors).
  void finish() const {
    if (entries_.empty()) return;
    std::string msg = name_ + ": unknown key(s):";
    for (const auto& [k, v] : entries_) msg += " '" + k + "'";
    throw std::runtime_error(msg);
  }

 private:
  std::string name_ = "<config>";
  std::map<std::string, std::string> entries_;
};

// ---- enum spellings ---------------------------------------------------------

LossVariant parse_variant(const std::string& raw, const std::string& where) {
  const std::string s = trimmed(raw);
  if (s == "hierarchical") return LossVariant::Hierarchical;
  if (s == "split" || s == "split-embedding") return LossVariant::SplitEmbedding;
  if (s == "ae" || s == "ae-baseline") return LossVariant::AeBaseline;
  if (s == "ce" || s == "cross-entropy") return LossVariant::CrossEntropy;
  bad_value(where, raw, "one of hierarchical|split|ae|ce");
}

AnchorInit parse_anchor_init(const std::string& raw,
                             const std::string& where) {
  const std::string s = trimmed(raw);
  if (s == "thomson") return AnchorInit::Thomson;
  if (s == "random") return AnchorInit::Random;
  bad_value(where, raw, "one of thomson|random");
}

ShapeKind parse_shape(const std::string& raw, const std::string& where) {
  const std::string s = trimmed(raw);
  if (s == "disc") return ShapeKind::Disc;
  if (s == "rectangle" || s == "rect") return ShapeKind::Rectangle;
  bad_value(where, raw, "one of disc|rectangle");
}

ClassKind parse_kind(const std::string& raw, const std::string& where) {
  const std::string s = trimmed(raw);
  if (s == "thing") return ClassKind::Thing;
  if (s == "stuff") return ClassKind::Stuff;
  bad_value(where, raw, "one of thing|stuff");
}

// ---- scene plumbing ---------------------------------------------------------

/// Scene description file (same `key = value` grammar as every config):
///   height = 32            width = 48          seed = 7
///   class.N = <name> <thing|stuff>             (N = 0,1,... = class id)
///   band.N  = <class_id> <height_fraction>     (top to bottom; sum to 1)
///   thing.N = <class_id> <count_min> <count_max> <disc|rectangle>
///             <size_min> <size_max>            (sizes: fraction of min(H,W))
SceneSpec read_scene_spec(const fs::path& path) {
  KvFile kv(path);
  SceneSpec spec;
  kv.take_int("height", spec.height);
  kv.take_int("width", spec.width);
  kv.take_u64("seed", spec.rng_seed);

  std::vector<ClassInfo> classes;
  for (int n = 0;; ++n) {
    auto v = kv.take("class." + std::to_string(n));
    if (!v) break;
    const std::string where = kv.where("class." + std::to_string(n));
    std::istringstream iss(*v);
    ClassInfo info;
    info.id = n;
    std::string kind;
    if (!(iss >> info.name >> kind)) bad_value(where, *v, "'<name> <kind>'");
    info.kind = parse_kind(kind, where);
    std::string extra;
    if (iss >> extra) bad_value(where, *v, "'<name> <kind>'");
    classes.push_back(std::move(info));
  }
  spec.catalog = ClassCatalog(std::move(classes));

  for (int n = 0;; ++n) {
    auto v = kv.take("band." + std::to_string(n));
    if (!v) break;
    const std::string where = kv.where("band." + std::to_string(n));
    std::istringstream iss(*v);
    std::string cls, frac, extra;
    if (!(iss >> cls >> frac) || (iss >> extra))
      bad_value(where, *v, "'<class_id> <fraction>'");
    spec.bands.push_back(
        {parse_int(cls, where), parse_double(frac, where)});
  }

  for (int n = 0;; ++n) {
    auto v = kv.take("thing." + std::to_string(n));
    if (!v) break;
    const std::string where = kv.where("thing." + std::to_string(n));
    std::istringstream iss(*v);
    std::string cls, cmin, cmax, shape, smin, smax, extra;
    if (!(iss >> cls >> cmin >> cmax >> shape >> smin >> smax) ||
        (iss >> extra))
      bad_value(where, *v,
                "'<class_id> <count_min> <count_max> <shape> <size_min> "
                "<size_max>'");
    ThingSpec t;
    t.class_id = parse_int(cls, where);
    t.count_min = parse_int(cmin, where);
    t.count_max = parse_int(cmax, where);
    t.shape = parse_shape(shape, where);
    t.size_min = parse_double(smin, where);
    t.size_max = parse_double(smax, where);
    spec.things.push_back(t);
  }

  kv.finish();
  return spec;
}

SceneSpec suite_spec(const std::string& name) {
  for (auto& [n, spec] : standard_suite())
    if (n == name) return spec;
  std::string names;
  for (auto& [n, spec] : standard_suite()) names += " " + n;
  throw std::runtime_error("unknown suite scene '" + name + "'; have:" +
                           names);
}

/// The on-disk layout `gen-scene --out-prefix` writes and `train --scene`
/// reads back.
struct ScenePaths {
  fs::path labels, instances, catalog, panoptic;
  explicit ScenePaths(const std::string& prefix)
      : labels(prefix + ".labels.hle1"),
        instances(prefix + ".instances.hle1"),
        catalog(prefix + ".catalog.tsv"),
        panoptic(prefix + ".panoptic.hle1") {}
};

Scene load_scene_prefix(const std::string& prefix) {
  const ScenePaths p(prefix);
  Scene scene;
  scene.labels = io::load_label_map(p.labels);
  scene.instances = io::load_instance_map(p.instances);
  scene.catalog = io::load_catalog(p.catalog);
  auto violations = validate(scene.labels, scene.instances, scene.catalog);
  if (!violations.empty())
    throw std::runtime_error("scene '" + prefix + "' fails validation: " +
                             violations.front().message);
  return scene;
}

// ---- gen-scene --------------------------------------------------------------

struct GenSceneOpts {
  std::string spec_path, suite;
  std::string out_labels, out_instances, out_catalog, out_panoptic, prefix;
  std::optional<std::uint64_t> seed;
};

void run_gen_scene(const GenSceneOpts& o) {
  if (o.spec_path.empty() == o.suite.empty())
    throw std::runtime_error("gen-scene: give exactly one of --spec/--suite");
  SceneSpec spec =
      o.suite.empty() ? read_scene_spec(o.spec_path) : suite_spec(o.suite);
  if (o.seed) spec.rng_seed = *o.seed;

  std::string out_labels = o.out_labels, out_instances = o.out_instances;
  std::string out_catalog = o.out_catalog, out_panoptic = o.out_panoptic;
  if (!o.prefix.empty()) {
    const ScenePaths p(o.prefix);
    if (out_labels.empty()) out_labels = p.labels.string();
    if (out_instances.empty()) out_instances = p.instances.string();
    if (out_catalog.empty()) out_catalog = p.catalog.string();
    if (out_panoptic.empty()) out_panoptic = p.panoptic.string();
  }
  if (out_labels.empty() && out_instances.empty() && out_catalog.empty() &&
      out_panoptic.empty())
    throw std::runtime_error(
        "gen-scene: no outputs requested (use --out-prefix or --out-*)");

  const Scene scene = generate(spec);
  if (!out_labels.empty()) io::save_label_map(out_labels, scene.labels);
  if (!out_instances.empty())
    io::save_instance_map(out_instances, scene.instances);
  if (!out_catalog.empty()) io::save_catalog(out_catalog, scene.catalog);
  if (!out_panoptic.empty())
    io::save_panoptic(out_panoptic, panoptic_from_truth(scene.labels,
                                                        scene.instances,
                                                        scene.catalog));
}

// ---- thomson ----------------------------------------------------------------

struct ThomsonOpts {
  ThomsonConfig config;
  std::string out;
};

void run_thomson(const ThomsonOpts& o) {
  const std::vector<double> points = thomson_init(o.config);
  FieldGrid g;
  g.height = o.config.k;
  g.width = o.config.d;
  g.channels = 1;
  g.data = points;
  if (!o.out.empty()) io::save_field_grid(o.out, g);

  double min_dot = 1.0, max_dot = -1.0;
  for (int i = 0; i < o.config.k; ++i)
    for (int j = i + 1; j < o.config.k; ++j) {
      double dot = 0.0;
      for (int c = 0; c < o.config.d; ++c)
        dot += points[i * o.config.d + c] * points[j * o.config.d + c];
      min_dot = std::min(min_dot, dot);
      max_dot = std::max(max_dot, dot);
    }
  std::cout << "energy\t" << fmt(thomson_energy(points, o.config.k,
                                                o.config.d))
            << '\n';
  if (o.config.k > 1)
    std::cout << "min_dot\t" << fmt(min_dot) << '\n'
              << "max_dot\t" << fmt(max_dot) << '\n';
}

// ---- train ------------------------------------------------------------------

struct TrainOpts {
  std::string scene_prefix, suite, config_path;
  std::string out_fields, out_state, curve;
  std::optional<int> steps, dim, log_every;
  std::optional<double> step_size;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant, anchor_init;
};

TrainConfig read_train_config(const std::string& path) {
  TrainConfig c;
  if (path.empty()) return c;
  KvFile kv{fs::path(path)};
  kv.take_int("steps", c.steps);
  kv.take_double("step_size", c.step_size);
  kv.take_double("beta1", c.beta1);
  kv.take_double("beta2", c.beta2);
  kv.take_double("adam_epsilon", c.adam_epsilon);
  kv.take_int("dim", c.dim);
  if (auto v = kv.take("anchor_init"))
    c.anchor_init = parse_anchor_init(*v, kv.where("anchor_init"));
  kv.take_double("sigma_init", c.sigma_init);
  kv.take_double("sigma_spatial_init", c.sigma_spatial_init);
  kv.take_double("init_noise", c.init_noise);
  kv.take_u64("seed", c.rng_seed);
  if (auto v = kv.take("variant"))
    c.variant = parse_variant(*v, kv.where("variant"));
  kv.take_double("gamma", c.loss.gamma);
  if (auto v = kv.take("instance_support")) {
    const std::string s = trimmed(*v);
    if (s == "full")
      c.loss.instance_support = InstanceSupport::FullImage;
    else if (s == "bbox")
      c.loss.instance_support = InstanceSupport::BoundingBox;
    else
      bad_value(kv.where("instance_support"), *v, "one of full|bbox");
  }
  kv.take_int("bbox_margin", c.loss.bbox_margin);
  if (auto v = kv.take("softmax_classes")) {
    const std::string s = trimmed(*v);
    if (s == "all")
      c.loss.softmax_classes = ClassAveraging::All;
    else if (s == "present")
      c.loss.softmax_classes = ClassAveraging::Present;
    else
      bad_value(kv.where("softmax_classes"), *v, "one of all|present");
  }
  kv.take_double("ae_pull", c.ae_pull);
  kv.take_double("ae_push", c.ae_push);
  kv.take_double("ae_sem_pull", c.ae_sem_pull);
  kv.take_double("ae_sem_push", c.ae_sem_push);
  kv.take_double("divergence_factor", c.divergence_factor);
  kv.take_int("log_every", c.log_every);
  kv.finish();
  return c;
}

void write_curve(const fs::path& path, const std::vector<CurveRow>& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  os << "step,seg,seg_mean,ins,ins_var,seed,total\n";
  for (const CurveRow& row : curve)
    os << row.step << ',' << fmt(row.report.seg) << ','
       << fmt(row.report.seg_mean) << ',' << fmt(row.report.ins) << ','
       << fmt(row.report.ins_var) << ',' << fmt(row.report.seed) << ','
       << fmt(row.report.total) << '\n';
  if (!os.good()) throw std::runtime_error("write failed: " + path.string());
}

void run_train(const TrainOpts& o) {
  if (o.scene_prefix.empty() == o.suite.empty())
    throw std::runtime_error("train: give exactly one of --scene/--suite");
  const Scene scene = o.suite.empty() ? load_scene_prefix(o.scene_prefix)
                                      : generate(suite_spec(o.suite));

  TrainConfig config = read_train_config(o.config_path);
  if (o.steps) config.steps = *o.steps;
  if (o.dim) config.dim = *o.dim;
  if (o.log_every) config.log_every = *o.log_every;
  if (o.step_size) config.step_size = *o.step_size;
  if (o.seed) config.rng_seed = *o.seed;
  if (o.variant) config.variant = parse_variant(*o.variant, "--variant");
  if (o.anchor_init)
    config.anchor_init = parse_anchor_init(*o.anchor_init, "--anchor-init");

  const TrainResult result = train(scene, config);
  if (!o.out_fields.empty()) io::save_fields(o.out_fields, result.fields);
  if (!o.out_state.empty()) io::save_state(o.out_state, result.state);
  if (!o.curve.empty()) write_curve(o.curve, result.curve);
}

// ---- decode -----------------------------------------------------------------

struct DecodeOpts {
  std::string fields_path, state_path, catalog_path, config_path;
  std::string out, scores;
};

DecoderConfig read_decoder_config(const std::string& path) {
  DecoderConfig c;
  if (path.empty()) return c;
  KvFile kv{fs::path(path)};
  kv.take_double("seed_threshold", c.seed_threshold);
  kv.take_double("merge_threshold", c.merge_threshold);
  kv.take_double("mask_threshold", c.mask_threshold);
  kv.take_double("stuff_threshold", c.stuff_threshold);
  kv.take_int("min_stuff_area", c.min_stuff_area);
  kv.take_int("downsample_factor", c.downsample_factor);
  kv.take_bool("things_only_seeds", c.things_only_seeds);
  kv.finish();
  return c;
}

void run_decode(const DecodeOpts& o) {
  const PixelFields fields = io::load_fields(o.fields_path);
  const SemanticState state = io::load_state(o.state_path);
  const ClassCatalog catalog = io::load_catalog(o.catalog_path);
  const DecoderConfig config = read_decoder_config(o.config_path);

  const PanopticMap pan = decode_downsampled(fields, state, catalog, config);
  io::save_panoptic(o.out, pan);

  if (!o.scores.empty()) {
    // Ranking signal for detection-style metrics: mean seediness over each
    // thing segment's pixels.
    std::map<std::int32_t, std::pair<double, int>> acc;
    for (const SegmentInfo& seg : pan.segments)
      if (seg.is_thing) acc[seg.id] = {0.0, 0};
    for (int i = 0; i < pan.pixels(); ++i) {
      auto it = acc.find(pan.data[static_cast<std::size_t>(i)]);
      if (it == acc.end()) continue;
      it->second.first += fields.seed.data[static_cast<std::size_t>(i)];
      it->second.second += 1;
    }
    std::ofstream os(o.scores);
    if (!os) throw std::runtime_error("cannot open " + o.scores);
    for (const auto& [id, sum_count] : acc)
      os << id << '\t'
         << fmt(sum_count.second > 0 ? sum_count.first / sum_count.second
                                     : 0.0)
         << '\n';
    if (!os.good()) throw std::runtime_error("write failed: " + o.scores);
  }
}

// ---- eval -------------------------------------------------------------------

struct EvalOpts {
  std::string pred_path, gt_path, catalog_path, scores_path;
  std::string metrics = "pq,pqd,pc,miou,ap";
};

std::map<std::int32_t, double> read_scores(const std::string& path) {
  std::map<std::int32_t, double> scores;
  if (path.empty()) return scores;
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string s = trimmed(line);
    if (s.empty() || s[0] == '#') continue;
    std::istringstream iss(s);
    std::string id, score, extra;
    const std::string where = path + ":" + std::to_string(lineno);
    if (!(iss >> id >> score) || (iss >> extra))
      bad_value(where, line, "'<segment_id> <score>'");
    const std::int32_t key = parse_int(id, where);
    if (!scores.emplace(key, parse_double(score, where)).second)
      throw std::runtime_error(where + ": duplicate segment id");
  }
  return scores;
}

std::vector<ScoredInstance> thing_instances(
    const PanopticMap& pan, const std::map<std::int32_t, double>& scores) {
  std::map<std::int32_t, ScoredInstance> by_id;
  for (const SegmentInfo& seg : pan.segments) {
    if (!seg.is_thing) continue;
    ScoredInstance inst;
    inst.class_id = seg.class_id;
    auto it = scores.find(seg.id);
    inst.score = it == scores.end() ? 1.0 : it->second;
    by_id.emplace(seg.id, std::move(inst));
  }
  for (int i = 0; i < pan.pixels(); ++i) {
    auto it = by_id.find(pan.data[static_cast<std::size_t>(i)]);
    if (it != by_id.end()) it->second.pixels.push_back(i);
  }
  std::vector<ScoredInstance> out;
  for (auto& [id, inst] : by_id)
    if (!inst.pixels.empty()) out.push_back(std::move(inst));
  return out;
}

void run_eval(const EvalOpts& o) {
  const PanopticMap pred = io::load_panoptic(o.pred_path);
  const PanopticMap gt = io::load_panoptic(o.gt_path);
  const ClassCatalog catalog = io::load_catalog(o.catalog_path);

  std::vector<std::string> wanted;
  std::stringstream ss(o.metrics);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string m = trimmed(item);
    if (m.empty()) continue;
    if (m != "pq" && m != "pqd" && m != "pc" && m != "miou" && m != "ap")
      throw std::runtime_error("eval: unknown metric '" + m +
                               "' (have pq,pqd,pc,miou,ap)");
    wanted.push_back(m);
  }
  if (wanted.empty()) throw std::runtime_error("eval: no metrics requested");

  std::optional<PqResult> pq_result;
  for (const std::string& m : wanted) {
    if (m == "pq") {
      pq_result = panoptic_quality(pred, gt, catalog);
      std::cout << "pq\t" << fmt(pq_result->pq_all) << '\n'
                << "pq_things\t" << fmt(pq_result->pq_things) << '\n'
                << "pq_stuff\t" << fmt(pq_result->pq_stuff) << '\n';
    } else if (m == "pqd") {
      const PqResult r = pq_dagger(pred, gt, catalog);
      std::cout << "pqd\t" << fmt(r.pq_all) << '\n'
                << "pqd_things\t" << fmt(r.pq_things) << '\n'
                << "pqd_stuff\t" << fmt(r.pq_stuff) << '\n';
    } else if (m == "pc") {
      const PcResult r = parsing_covering(pred, gt, catalog);
      std::cout << "pc\t" << (r.undefined ? "nan" : fmt(r.value)) << '\n';
    } else if (m == "miou") {
      std::cout << "miou\t"
                << fmt(mean_iou(semantic_from_panoptic(pred),
                                semantic_from_panoptic(gt), catalog))
                << '\n';
    } else if (m == "ap") {
      const auto thresholds = ap_iou_thresholds();
      std::cout << "ap\t"
                << fmt(average_precision(
                       thing_instances(pred, read_scores(o.scores_path)),
                       thing_instances(gt, {}), thresholds))
                << '\n';
    }
  }

  if (pq_result) {
    for (const ClassInfo& info : catalog.classes()) {
      ClassPqStat stat;
      if (auto it = pq_result->per_class.find(info.id);
          it != pq_result->per_class.end())
        stat = it->second;
      std::cout << "class\t" << info.id << '\t' << info.name << '\t'
                << (info.kind == ClassKind::Thing ? "thing" : "stuff") << '\t'
                << fmt(stat.pq()) << '\t' << stat.tp << '\t' << stat.fp
                << '\t' << stat.fn << '\n';
    }
  }
}

// ---- bench-downsample -------------------------------------------------------

struct BenchOpts {
  std::string fields_path, state_path, catalog_path, gt_path, out;
  std::vector<int> factors{1, 2, 4, 8};
  int repeats = 5;
  std::string config_path;
};

void run_bench(const BenchOpts& o) {
  const PixelFields fields = io::load_fields(o.fields_path);
  const SemanticState state = io::load_state(o.state_path);
  const ClassCatalog catalog = io::load_catalog(o.catalog_path);
  const PanopticMap gt = io::load_panoptic(o.gt_path);
  const DecoderConfig config = read_decoder_config(o.config_path);

  const auto rows = bench_downsample(fields, state, catalog, gt, o.factors,
                                     o.repeats, config);
  std::ostringstream csv;
  csv << "factor,ms,pq\n";
  for (const BenchRow& row : rows)
    csv << row.factor << ',' << fmt(row.millis) << ',' << fmt(row.pq) << '\n';
  if (o.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream os(o.out);
    if (!os) throw std::runtime_error("cannot open " + o.out);
    os << csv.str();
    if (!os.good()) throw std::runtime_error("write failed: " + o.out);
  }
}

// ---- gradcheck ----------------------------------------------------------------

struct GradCheckOpts {
  int trials = 100;
  std::uint64_t seed = 1;
  double h = 1e-5;
  double tolerance = 1e-4;
};

void run_gradcheck(const GradCheckOpts& o) {
  bool all_pass = true;
  for (const GradCheckReport& r :
       run_gradient_checks(o.trials, o.seed, o.h, o.tolerance)) {
    all_pass = all_pass && r.pass;
    std::cout << (r.pass ? "PASS" : "FAIL") << '\t' << r.name << '\t'
              << "max_rel_err=" << fmt(r.max_rel_err) << '\t'
              << "tol=" << fmt(r.tolerance) << '\t' << "trials=" << r.trials
              << '\n';
  }
  if (!all_pass) throw std::runtime_error("gradcheck: at least one check failed");
}

// ---- viz ----------------------------------------------------------------------

struct VizEmbeddingsOpts {
  std::string fields_path, prefix;
};

void run_viz_embeddings(const VizEmbeddingsOpts& o) {
  const PixelFields fields = io::load_fields(o.fields_path);
  for (const fs::path& p : viz_embeddings(fields.e, o.prefix))
    std::cout << p.string() << '\n';
}

struct VizDistanceOpts {
  std::string fields_path, out;
  int row = 0, col = 0;
};

void run_viz_distance(const VizDistanceOpts& o) {
  const PixelFields fields = io::load_fields(o.fields_path);
  viz_distance(fields.e, o.row, o.col, o.out);
  std::cout << o.out << '\n';
}

struct VizSeedOpts {
  std::string fields_path, out;
};

void run_viz_seed(const VizSeedOpts& o) {
  const PixelFields fields = io::load_fields(o.fields_path);
  viz_scalar(fields.seed, 0.0, 1.0, o.out);
  std::cout << o.out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "hle -- hierarchical embedding fields for panoptic segmentation:\n"
      "synthetic scenes, direct field optimization, panoptic decoding,\n"
      "evaluation metrics and PPM visualization."};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hle 0.1.0");

  // gen-scene
  auto gen = std::make_shared<GenSceneOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "gen-scene", "Generate a synthetic panoptic scene");
    sub->add_option("--spec", gen->spec_path,
                    "Scene description file (key = value: height, width, "
                    "seed, class.N = '<name> <thing|stuff>', band.N = "
                    "'<class_id> <fraction>', thing.N = '<class_id> "
                    "<count_min> <count_max> <disc|rectangle> <size_min> "
                    "<size_max>')")
        ->check(CLI::ExistingFile);
    sub->add_option("--suite", gen->suite,
                    "Built-in scene: tiny, small, occluded or dense");
    sub->add_option("--seed", gen->seed, "Override the spec's RNG seed");
    sub->add_option("--out-labels", gen->out_labels,
                    "Semantic label map output (HLE1)");
    sub->add_option("--out-instances", gen->out_instances,
                    "Instance id map output (HLE1)");
    sub->add_option("--out-catalog", gen->out_catalog,
                    "Class catalog output (TSV)");
    sub->add_option("--out-panoptic", gen->out_panoptic,
                    "Ground-truth panoptic map output (HLE1 + .segments)");
    sub->add_option("--out-prefix", gen->prefix,
                    "Shorthand: write <prefix>.labels.hle1, .instances.hle1, "
                    ".catalog.tsv and .panoptic.hle1");
    sub->callback([gen] { run_gen_scene(*gen); });
  }

  // thomson
  auto tho = std::make_shared<ThomsonOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "thomson", "Spread k points on the unit sphere in R^d");
    sub->add_option("--k", tho->config.k, "Number of points")->required();
    sub->add_option("--d", tho->config.d, "Ambient dimension")->required();
    sub->add_option("--steps", tho->config.steps, "Descent steps")
        ->capture_default_str();
    sub->add_option("--step-size", tho->config.step_size, "Initial step size")
        ->capture_default_str();
    sub->add_option("--seed", tho->config.rng_seed, "RNG seed")
        ->capture_default_str();
    sub->add_option("--out", tho->out, "Points output (HLE1, k x d grid)");
    sub->callback([tho] { run_thomson(*tho); });
  }

  // train
  auto tr = std::make_shared<TrainOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "train", "Optimize prediction fields directly against a scene");
    sub->add_option("--scene", tr->scene_prefix,
                    "Scene file prefix (expects <prefix>.labels.hle1, "
                    ".instances.hle1, .catalog.tsv)");
    sub->add_option("--suite", tr->suite,
                    "Built-in scene: tiny, small, occluded or dense");
    sub->add_option("--config", tr->config_path,
                    "Training config (key = value; keys: steps, step_size, "
                    "beta1, beta2, adam_epsilon, dim, anchor_init, "
                    "sigma_init, sigma_spatial_init, init_noise, seed, "
                    "variant, gamma, instance_support, bbox_margin, "
                    "softmax_classes, ae_pull, ae_push, ae_sem_pull, "
                    "ae_sem_push, divergence_factor, log_every; unknown keys "
                    "are errors)")
        ->check(CLI::ExistingFile);
    sub->add_option("--steps", tr->steps, "Override: optimization steps");
    sub->add_option("--dim", tr->dim, "Override: embedding dimension");
    sub->add_option("--step-size", tr->step_size, "Override: learning rate");
    sub->add_option("--seed", tr->seed, "Override: RNG seed");
    sub->add_option("--log-every", tr->log_every,
                    "Override: curve sampling interval");
    sub->add_option("--variant", tr->variant,
                    "Override: hierarchical|split|ae|ce");
    sub->add_option("--anchor-init", tr->anchor_init,
                    "Override: thomson|random");
    sub->add_option("--out-fields", tr->out_fields,
                    "Trained per-pixel fields output (HLE1)");
    sub->add_option("--out-state", tr->out_state,
                    "Trained semantic state output (HLE1)");
    sub->add_option("--curve", tr->curve,
                    "Loss curve output (CSV: step,seg,seg_mean,ins,ins_var,"
                    "seed,total)");
    sub->callback([tr] { run_train(*tr); });
  }

  // decode
  auto dec = std::make_shared<DecodeOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "decode", "Cluster prediction fields into a panoptic map");
    sub->add_option("--fields", dec->fields_path, "Prediction fields (HLE1)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--state", dec->state_path, "Semantic state (HLE1)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--catalog", dec->catalog_path, "Class catalog (TSV)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--config", dec->config_path,
                    "Decoder config (key = value; keys: seed_threshold, "
                    "merge_threshold, mask_threshold, stuff_threshold, "
                    "min_stuff_area, downsample_factor, things_only_seeds; "
                    "unknown keys are errors)")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", dec->out,
                    "Panoptic map output (HLE1 + .segments table)")
        ->required();
    sub->add_option("--scores", dec->scores,
                    "Optional per-thing-segment score table output "
                    "(segment_id <TAB> mean seediness)");
    sub->callback([dec] { run_decode(*dec); });
  }

  // eval
  auto ev = std::make_shared<EvalOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "eval", "Score a predicted panoptic map against ground truth");
    sub->add_option("--pred", ev->pred_path, "Predicted panoptic map (HLE1)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--gt", ev->gt_path, "Ground-truth panoptic map (HLE1)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--catalog", ev->catalog_path, "Class catalog (TSV)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--metrics", ev->metrics,
                    "Comma list from pq,pqd,pc,miou,ap")
        ->capture_default_str();
    sub->add_option("--scores", ev->scores_path,
                    "Score table for AP ranking (segment_id <TAB> score); "
                    "missing segments score 1.0")
        ->check(CLI::ExistingFile);
    sub->callback([ev] { run_eval(*ev); });
  }

  // bench-downsample
  auto be = std::make_shared<BenchOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "bench-downsample",
        "Time the decoder at several downsampling factors");
    sub->add_option("--fields", be->fields_path, "Prediction fields (HLE1)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--state", be->state_path, "Semantic state (HLE1)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--catalog", be->catalog_path, "Class catalog (TSV)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--gt", be->gt_path, "Ground truth for PQ (HLE1)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--factors", be->factors, "Factors to benchmark")
        ->delimiter(',')
        ->capture_default_str();
    sub->add_option("--repeats", be->repeats,
                    "Runs per factor (median is reported)")
        ->capture_default_str();
    sub->add_option("--config", be->config_path, "Decoder config file")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", be->out, "CSV output (default: stdout)");
    sub->callback([be] { run_bench(*be); });
  }

  // gradcheck
  auto gc = std::make_shared<GradCheckOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "gradcheck",
        "Compare analytic loss gradients against central differences");
    sub->add_option("--trials", gc->trials, "Random probes per check")
        ->capture_default_str();
    sub->add_option("--seed", gc->seed, "RNG seed")->capture_default_str();
    sub->add_option("--fd-step", gc->h, "Finite-difference step h")
        ->capture_default_str();
    sub->add_option("--tol", gc->tolerance, "Relative-error tolerance")
        ->capture_default_str();
    sub->callback([gc] { run_gradcheck(*gc); });
  }

  // viz
  {
    CLI::App* viz = app.add_subcommand(
        "viz", "Export PPM visualizations of prediction fields");
    viz->require_subcommand(1);

    auto ve = std::make_shared<VizEmbeddingsOpts>();
    CLI::App* emb = viz->add_subcommand(
        "embeddings", "Embedding channels as RGB triples, one PPM per group");
    emb->add_option("--fields", ve->fields_path, "Prediction fields (HLE1)")
        ->required()
        ->check(CLI::ExistingFile);
    emb->add_option("--out-prefix", ve->prefix,
                    "Writes <prefix>.<group>.ppm; paths are printed")
        ->required();
    emb->callback([ve] { run_viz_embeddings(*ve); });

    auto vd = std::make_shared<VizDistanceOpts>();
    CLI::App* dist = viz->add_subcommand(
        "distance",
        "Embedding distance of every pixel to a target pixel (red = near, "
        "blue = far)");
    dist->add_option("--fields", vd->fields_path, "Prediction fields (HLE1)")
        ->required()
        ->check(CLI::ExistingFile);
    dist->add_option("--row", vd->row, "Target pixel row")->required();
    dist->add_option("--col", vd->col, "Target pixel column")->required();
    dist->add_option("--out", vd->out, "PPM output path")->required();
    dist->callback([vd] { run_viz_distance(*vd); });

    auto vs = std::make_shared<VizSeedOpts>();
    CLI::App* seed = viz->add_subcommand(
        "seed", "Seediness map as an 8-bit grayscale PPM");
    seed->add_option("--fields", vs->fields_path, "Prediction fields (HLE1)")
        ->required()
        ->check(CLI::ExistingFile);
    seed->add_option("--out", vs->out, "PPM output path")->required();
    seed->callback([vs] { run_viz_seed(*vs); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "hle: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
