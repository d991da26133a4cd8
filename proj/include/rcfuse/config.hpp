#pragma once

// Run configuration: a single versioned JSON document holding dataset
// geometry, model structure, loss constants, and evaluation settings, with
// named built-in presets ("vod", "tj4d", "synth-small").

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rcfuse/common.hpp"
#include "rcfuse/dataset_io.hpp"
#include "rcfuse/eval_metrics.hpp"
#include "rcfuse/fusion_blocks.hpp"

namespace rcf {

using nlohmann::json;

struct DatasetConfig {
  std::string root;     // dataset directory; empty for synthetic runs
  std::string frame;    // frame id within root, used by `forward`
  std::string schema = "vod7";
  std::vector<std::string> channels = schema_vod7();
  int image_w = 0;
  int image_h = 0;
  RangeSpec range;
  std::optional<RangeSpec> pillar_range;  // when the pillar grid needs its own range
  Vec3 voxel_size;
  Vec2 pillar_size;
  std::vector<std::string> classes;

  const RangeSpec& range_for_pillars() const { return pillar_range ? *pillar_range : range; }
};

struct ModelConfig {
  std::string variant = "voxel";  // "voxel" | "pillar"
  FusionKind fusion = FusionKind::kDeformable;
  Placement placement = Placement::kBeforeResidual;
  int n_fusion = 2;
  int n_samples = 4;   // deformable samples per level
  int n_residual = 2;
  std::vector<int> channels;        // voxel backbone, per block
  std::vector<int> strides;
  std::vector<int> pillar_channels;
  std::vector<int> pillar_strides;
  int z_bins = 10;                  // pillar lifting bins
  int neck_first_block = 4;         // 1-based; neck combines this block onward
  int seg_head_stage = 0;           // 0 = after the last fusion block, -1 = off, k = block k
  bool seg_loss = true;
  bool score_weighting = true;
  bool zero_not_in_view = false;
  uint64_t init_seed = 24181;
  std::string weights;              // optional weights file to load

  int blocks() const { return static_cast<int>(channels.size()); }
  int pillar_blocks() const { return static_cast<int>(pillar_channels.size()); }

  // Resolved 0-based head stage for a backbone with `n_blocks` stages, or -1.
  int head_stage(int n_blocks) const {
    if (seg_head_stage == -1) return -1;
    if (seg_head_stage == 0) return n_fusion > 0 ? n_fusion - 1 : -1;
    if (seg_head_stage < 1 || seg_head_stage > n_blocks) {
      throw ConfigError("model.seg_head_stage out of range");
    }
    return seg_head_stage - 1;
  }
};

struct LossConfig {
  double alpha_seg = 1.0;
  double alpha_det = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

struct EvalSettings {
  std::map<std::string, double> iou_thresholds;  // class name -> threshold
  int ap_points = 11;
  std::string iou_kind = "3d";  // "3d" | "bev"
};

struct SyntheticConfig {
  uint64_t seed = 7;
  int n_boxes = 4;
  int n_points = 300;
  int pyramid_levels = 4;
  int pyramid_channels = 8;
  int pyramid_base_h = 64;
  int pyramid_base_w = 96;
};

struct Config {
  int schema_version = 1;
  std::string name;
  DatasetConfig dataset;
  ModelConfig model;
  LossConfig loss;
  EvalSettings eval;
  SyntheticConfig synthetic;

  VoxelGridSpec voxel_spec() const {
    return VoxelGridSpec::create(dataset.range, dataset.voxel_size);
  }
  VoxelGridSpec pillar_spec() const {
    return VoxelGridSpec::create_pillar(dataset.range_for_pillars(), dataset.pillar_size.x,
                                        dataset.pillar_size.y);
  }
  EvalConfig eval_config() const {
    EvalConfig ec;
    for (size_t i = 0; i < dataset.classes.size(); ++i) {
      const auto it = eval.iou_thresholds.find(dataset.classes[i]);
      if (it == eval.iou_thresholds.end()) {
        throw ConfigError("eval.iou_thresholds: missing class '" + dataset.classes[i] + "'");
      }
      ec.iou_thresholds[static_cast<int>(i)] = it->second;
    }
    ec.ap_points = eval.ap_points;
    ec.iou_kind = eval.iou_kind == "bev" ? EvalConfig::IouKind::kBev : EvalConfig::IouKind::k3d;
    ec.validate();
    return ec;
  }
  SyntheticSpec synthetic_spec() const {
    SyntheticSpec spec;
    spec.range = dataset.range;
    spec.schema = dataset.channels;
    spec.n_boxes = synthetic.n_boxes;
    spec.n_points = synthetic.n_points;
    spec.n_classes = static_cast<int>(dataset.classes.size());
    spec.pyramid_levels = synthetic.pyramid_levels;
    spec.pyramid_channels = synthetic.pyramid_channels;
    spec.pyramid_base_h = synthetic.pyramid_base_h;
    spec.pyramid_base_w = synthetic.pyramid_base_w;
    return spec;
  }

  void validate() const;
  json to_json() const;
  static Config from_json(const json& j);
};

// ---------------------------------------------------------------------------
// Presets.
// ---------------------------------------------------------------------------

inline Config make_vod_config() {
  Config c;
  c.name = "vod";
  c.dataset.schema = "vod7";
  c.dataset.channels = schema_vod7();
  c.dataset.image_w = 1936;
  c.dataset.image_h = 1216;
  c.dataset.range = {{0.0, -25.6, -3.0}, {51.2, 25.6, 2.0}};
  c.dataset.voxel_size = {0.05, 0.05, 0.125};
  c.dataset.pillar_size = {0.16, 0.16};
  c.dataset.classes = {"Car", "Pedestrian", "Cyclist"};
  // Multi-modal voxel widths are doubled relative to the single-modal stack.
  c.model.channels = {32, 64, 128, 256, 256, 256};
  c.model.strides = {1, 2, 2, 2, 2, 2};
  c.model.pillar_channels = {32, 32, 64, 64, 64, 64};
  c.model.pillar_strides = {1, 1, 1, 1, 1, 1};
  c.eval.iou_thresholds = {{"Car", 0.5}, {"Pedestrian", 0.25}, {"Cyclist", 0.25}};
  c.eval.ap_points = 11;
  return c;
}

inline Config make_tj4d_config() {
  Config c = make_vod_config();
  c.name = "tj4d";
  c.dataset.schema = "tj4d5";
  c.dataset.channels = schema_tj4d5();
  c.dataset.image_w = 1920;
  c.dataset.image_h = 1080;
  c.dataset.range = {{0.0, -40.0, -4.0}, {70.4, 40.0, 2.0}};
  c.dataset.pillar_range = RangeSpec{{0.0, -39.68, -4.0}, {69.12, 39.68, 2.0}};
  c.dataset.classes = {"Car", "Pedestrian", "Cyclist", "Truck"};
  c.model.z_bins = 12;
  c.eval.iou_thresholds = {{"Car", 0.5}, {"Pedestrian", 0.25}, {"Cyclist", 0.25}, {"Truck", 0.5}};
  c.eval.ap_points = 40;
  return c;
}

// Desk-scale grid for synthetic runs and tests.
inline Config make_synth_small_config() {
  Config c;
  c.name = "synth-small";
  c.dataset.schema = "vod7";
  c.dataset.channels = schema_vod7();
  c.dataset.image_w = 384;
  c.dataset.image_h = 256;
  c.dataset.range = {{0.0, -12.8, -3.0}, {25.6, 12.8, 2.0}};
  c.dataset.voxel_size = {0.4, 0.4, 0.5};
  c.dataset.pillar_size = {0.8, 0.8};
  c.dataset.classes = {"Car", "Pedestrian", "Cyclist"};
  c.model.channels = {8, 16, 32, 64, 64, 64};
  c.model.strides = {1, 2, 2, 2, 2, 2};
  c.model.pillar_channels = {8, 16, 16, 16, 16, 16};
  c.model.pillar_strides = {1, 1, 1, 1, 1, 1};
  c.model.z_bins = 10;
  c.eval.iou_thresholds = {{"Car", 0.5}, {"Pedestrian", 0.25}, {"Cyclist", 0.25}};
  c.eval.ap_points = 11;
  return c;
}

inline Config make_named_config(const std::string& name) {
  if (name == "vod") return make_vod_config();
  if (name == "tj4d") return make_tj4d_config();
  if (name == "synth-small") return make_synth_small_config();
  throw ConfigError("unknown config preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// JSON round trip.
// ---------------------------------------------------------------------------

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& ctx) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("config: unknown key '" + ctx + "." + key + "'");
  }
}

template <typename T>
void read_to(const json& j, const char* key, T& dst, const std::string& ctx) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + ctx + "." + key + "': " + e.what());
  }
}

inline json range_to_json(const RangeSpec& r) {
  return json{{"min", {r.min.x, r.min.y, r.min.z}}, {"max", {r.max.x, r.max.y, r.max.z}}};
}

inline RangeSpec range_from_json(const json& j, const std::string& ctx) {
  check_keys(j, {"min", "max"}, ctx);
  const auto mn = j.at("min").get<std::vector<double>>();
  const auto mx = j.at("max").get<std::vector<double>>();
  if (mn.size() != 3 || mx.size() != 3) throw ConfigError("config: " + ctx + " needs 3 values");
  RangeSpec r{{mn[0], mn[1], mn[2]}, {mx[0], mx[1], mx[2]}};
  r.validate();
  return r;
}

}  // namespace detail

inline void Config::validate() const {
  if (schema_version != 1) throw ConfigError("config: unsupported schema_version");
  if (model.variant != "voxel" && model.variant != "pillar") {
    throw ConfigError("config: model.variant must be 'voxel' or 'pillar'");
  }
  if (dataset.classes.empty()) throw ConfigError("config: dataset.classes is empty");
  if (dataset.channels.size() < 3 || dataset.channels[0] != "x" || dataset.channels[1] != "y" ||
      dataset.channels[2] != "z") {
    throw ConfigError("config: dataset channels must start with x, y, z");
  }
  if (model.channels.size() != model.strides.size()) {
    throw ConfigError("config: model.channels and model.strides lengths differ");
  }
  if (model.pillar_channels.size() != model.pillar_strides.size()) {
    throw ConfigError("config: model.pillar_channels and model.pillar_strides lengths differ");
  }
  const int blocks = model.variant == "voxel" ? model.blocks() : model.pillar_blocks();
  if (blocks == 0) throw ConfigError("config: backbone has no blocks");
  if (model.n_fusion < 0 || model.n_fusion > blocks) {
    throw ConfigError("config: model.n_fusion out of range");
  }
  if (model.n_samples <= 0) throw ConfigError("config: model.n_samples must be positive");
  if (model.variant == "voxel" &&
      (model.neck_first_block < 1 || model.neck_first_block > model.blocks())) {
    throw ConfigError("config: model.neck_first_block out of range");
  }
  (void)model.head_stage(blocks);
  (void)voxel_spec();
  (void)pillar_spec();
  (void)eval_config();
}

inline json Config::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["name"] = name;
  json d;
  d["root"] = dataset.root;
  d["frame"] = dataset.frame;
  d["schema"] = dataset.schema;
  d["channels"] = dataset.channels;
  d["image_size"] = {dataset.image_w, dataset.image_h};
  d["range"] = detail::range_to_json(dataset.range);
  if (dataset.pillar_range) d["pillar_range"] = detail::range_to_json(*dataset.pillar_range);
  d["voxel_size"] = {dataset.voxel_size.x, dataset.voxel_size.y, dataset.voxel_size.z};
  d["pillar_size"] = {dataset.pillar_size.x, dataset.pillar_size.y};
  d["classes"] = dataset.classes;
  j["dataset"] = d;
  json m;
  m["variant"] = model.variant;
  m["fusion"] = model.fusion == FusionKind::kDeformable ? "msdff" : "sff";
  m["placement"] = model.placement == Placement::kBeforeResidual ? "br" : "ar";
  m["n_fusion"] = model.n_fusion;
  m["n_samples"] = model.n_samples;
  m["n_residual"] = model.n_residual;
  m["channels"] = model.channels;
  m["strides"] = model.strides;
  m["pillar_channels"] = model.pillar_channels;
  m["pillar_strides"] = model.pillar_strides;
  m["z_bins"] = model.z_bins;
  m["neck_first_block"] = model.neck_first_block;
  m["seg_head_stage"] = model.seg_head_stage;
  m["seg_loss"] = model.seg_loss;
  m["score_weighting"] = model.score_weighting;
  m["zero_not_in_view"] = model.zero_not_in_view;
  m["init_seed"] = model.init_seed;
  m["weights"] = model.weights;
  j["model"] = m;
  j["loss"] = json{{"alpha_seg", loss.alpha_seg},
                   {"alpha_det", loss.alpha_det},
                   {"focal_alpha", loss.focal_alpha},
                   {"focal_gamma", loss.focal_gamma}};
  j["eval"] = json{{"iou_thresholds", eval.iou_thresholds},
                   {"ap_points", eval.ap_points},
                   {"iou_kind", eval.iou_kind}};
  j["synthetic"] = json{{"seed", synthetic.seed},
                        {"n_boxes", synthetic.n_boxes},
                        {"n_points", synthetic.n_points},
                        {"pyramid_levels", synthetic.pyramid_levels},
                        {"pyramid_channels", synthetic.pyramid_channels},
                        {"pyramid_base", {synthetic.pyramid_base_h, synthetic.pyramid_base_w}}};
  return j;
}

inline Config Config::from_json(const json& j) {
  Config c;
  detail::check_keys(j, {"schema_version", "name", "dataset", "model", "loss", "eval", "synthetic"},
                     "");
  detail::read_to(j, "schema_version", c.schema_version, "");
  detail::read_to(j, "name", c.name, "");

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    detail::check_keys(d,
                       {"root", "frame", "schema", "channels", "image_size", "range",
                        "pillar_range", "voxel_size", "pillar_size", "classes"},
                       "dataset");
    detail::read_to(d, "root", c.dataset.root, "dataset");
    detail::read_to(d, "frame", c.dataset.frame, "dataset");
    detail::read_to(d, "schema", c.dataset.schema, "dataset");
    if (c.dataset.schema == "vod7") {
      c.dataset.channels = schema_vod7();
    } else if (c.dataset.schema == "tj4d5") {
      c.dataset.channels = schema_tj4d5();
    } else if (c.dataset.schema != "custom") {
      throw ConfigError("config: dataset.schema must be vod7, tj4d5, or custom");
    }
    detail::read_to(d, "channels", c.dataset.channels, "dataset");
    if (d.contains("image_size")) {
      const auto sz = d.at("image_size").get<std::vector<int>>();
      if (sz.size() != 2) throw ConfigError("config: dataset.image_size needs 2 values");
      c.dataset.image_w = sz[0];
      c.dataset.image_h = sz[1];
    }
    if (d.contains("range")) c.dataset.range = detail::range_from_json(d.at("range"), "dataset.range");
    if (d.contains("pillar_range")) {
      c.dataset.pillar_range = detail::range_from_json(d.at("pillar_range"), "dataset.pillar_range");
    }
    if (d.contains("voxel_size")) {
      const auto v = d.at("voxel_size").get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("config: dataset.voxel_size needs 3 values");
      c.dataset.voxel_size = {v[0], v[1], v[2]};
    }
    if (d.contains("pillar_size")) {
      const auto v = d.at("pillar_size").get<std::vector<double>>();
      if (v.size() != 2) throw ConfigError("config: dataset.pillar_size needs 2 values");
      c.dataset.pillar_size = {v[0], v[1]};
    }
    detail::read_to(d, "classes", c.dataset.classes, "dataset");
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    detail::check_keys(m,
                       {"variant", "fusion", "placement", "n_fusion", "n_samples", "n_residual",
                        "channels", "strides", "pillar_channels", "pillar_strides", "z_bins",
                        "neck_first_block", "seg_head_stage", "seg_loss", "score_weighting",
                        "zero_not_in_view", "init_seed", "weights"},
                       "model");
    detail::read_to(m, "variant", c.model.variant, "model");
    if (m.contains("fusion")) {
      const std::string kind = m.at("fusion").get<std::string>();
      if (kind == "msdff") {
        c.model.fusion = FusionKind::kDeformable;
      } else if (kind == "sff") {
        c.model.fusion = FusionKind::kSimple;
      } else {
        throw ConfigError("config: model.fusion must be 'sff' or 'msdff'");
      }
    }
    if (m.contains("placement")) {
      const std::string p = m.at("placement").get<std::string>();
      if (p == "br") {
        c.model.placement = Placement::kBeforeResidual;
      } else if (p == "ar") {
        c.model.placement = Placement::kAfterResidual;
      } else {
        throw ConfigError("config: model.placement must be 'br' or 'ar'");
      }
    }
    detail::read_to(m, "n_fusion", c.model.n_fusion, "model");
    detail::read_to(m, "n_samples", c.model.n_samples, "model");
    detail::read_to(m, "n_residual", c.model.n_residual, "model");
    detail::read_to(m, "channels", c.model.channels, "model");
    detail::read_to(m, "strides", c.model.strides, "model");
    detail::read_to(m, "pillar_channels", c.model.pillar_channels, "model");
    detail::read_to(m, "pillar_strides", c.model.pillar_strides, "model");
    detail::read_to(m, "z_bins", c.model.z_bins, "model");
    detail::read_to(m, "neck_first_block", c.model.neck_first_block, "model");
    detail::read_to(m, "seg_head_stage", c.model.seg_head_stage, "model");
    detail::read_to(m, "seg_loss", c.model.seg_loss, "model");
    detail::read_to(m, "score_weighting", c.model.score_weighting, "model");
    detail::read_to(m, "zero_not_in_view", c.model.zero_not_in_view, "model");
    detail::read_to(m, "init_seed", c.model.init_seed, "model");
    detail::read_to(m, "weights", c.model.weights, "model");
  }

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    detail::check_keys(l, {"alpha_seg", "alpha_det", "focal_alpha", "focal_gamma"}, "loss");
    detail::read_to(l, "alpha_seg", c.loss.alpha_seg, "loss");
    detail::read_to(l, "alpha_det", c.loss.alpha_det, "loss");
    detail::read_to(l, "focal_alpha", c.loss.focal_alpha, "loss");
    detail::read_to(l, "focal_gamma", c.loss.focal_gamma, "loss");
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    detail::check_keys(e, {"iou_thresholds", "ap_points", "iou_kind"}, "eval");
    if (e.contains("iou_thresholds")) {
      c.eval.iou_thresholds = e.at("iou_thresholds").get<std::map<std::string, double>>();
    }
    detail::read_to(e, "ap_points", c.eval.ap_points, "eval");
    detail::read_to(e, "iou_kind", c.eval.iou_kind, "eval");
  }

  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    detail::check_keys(s,
                       {"seed", "n_boxes", "n_points", "pyramid_levels", "pyramid_channels",
                        "pyramid_base"},
                       "synthetic");
    detail::read_to(s, "seed", c.synthetic.seed, "synthetic");
    detail::read_to(s, "n_boxes", c.synthetic.n_boxes, "synthetic");
    detail::read_to(s, "n_points", c.synthetic.n_points, "synthetic");
    detail::read_to(s, "pyramid_levels", c.synthetic.pyramid_levels, "synthetic");
    detail::read_to(s, "pyramid_channels", c.synthetic.pyramid_channels, "synthetic");
    if (s.contains("pyramid_base")) {
      const auto b = s.at("pyramid_base").get<std::vector<int>>();
      if (b.size() != 2) throw ConfigError("config: synthetic.pyramid_base needs 2 values");
      c.synthetic.pyramid_base_h = b[0];
      c.synthetic.pyramid_base_w = b[1];
    }
  }

  c.validate();
  return c;
}

// Resolve a --config argument: a preset name or a JSON file path.
inline Config resolve_config(const std::string& arg) {
  if (arg == "vod" || arg == "tj4d" || arg == "synth-small") return make_named_config(arg);
  std::FILE* f = std::fopen(arg.c_str(), "rb");
  if (!f) throw ConfigError("config: no preset or file named '" + arg + "'");
  std::string text;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
  std::fclose(f);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config: parse error in " + arg + ": " + e.what());
  }
  return Config::from_json(j);
}

inline std::string config_hash_hex(const Config& cfg) {
  const uint64_t h = fnv1a64(cfg.to_json().dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rcf
