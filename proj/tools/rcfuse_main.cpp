// rcfuse command line: synthesize scenes, run the fusion pipeline, export
// diagnostics and detection metrics.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure (a NaN/Inf detected anywhere in the pipeline).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rcfuse/config.hpp"
#include "rcfuse/dataset_io.hpp"
#include "rcfuse/eval_metrics.hpp"
#include "rcfuse/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rcf;

namespace {

struct CommonOpts {
  std::string config = "synth-small";
  std::optional<uint64_t> seed;
  int threads = 1;
  std::string out_dir = "out";
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config, "Config preset name or JSON file path");
  cmd->add_option("--seed", opts.seed, "Override the synthetic scene seed");
  cmd->add_option("--threads", opts.threads, "Worker thread count")->check(CLI::PositiveNumber);
  cmd->add_option("--out-dir", opts.out_dir, "Output directory");
}

uint64_t scene_seed(const Config& cfg, const CommonOpts& opts) {
  return opts.seed ? *opts.seed : cfg.synthetic.seed;
}

std::string frame_name(uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(seed));
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("cannot open for writing: " + path);
  if (!text.empty() && std::fwrite(text.data(), 1, text.size(), f) != text.size()) {
    std::fclose(f);
    throw DataError("short write: " + path);
  }
  std::fclose(f);
}

std::string file_hash_hex(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot hash missing file: " + path);
  uint64_t h = 14695981039346656037ULL;
  char buf[8192];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) h = fnv1a64(buf, n, h);
  std::fclose(f);
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

// One frame of input, real or synthetic.
struct Scene {
  PointCloud cloud;
  CalibrationSet calib;
  FeaturePyramid pyramid;
  std::vector<Box3D> boxes;
  std::vector<std::optional<Box2D>> boxes2d;
  std::string frame;
  bool synthetic = false;
};

Scene load_scene(const Config& cfg, uint64_t seed) {
  Scene scene;
  if (cfg.dataset.root.empty()) {
    scene.synthetic = true;
    scene.frame = frame_name(seed);
    scene.calib = synthetic_calibration(cfg.dataset.image_w, cfg.dataset.image_h);
    SyntheticScene s = generate_synthetic_scene(seed, cfg.synthetic_spec(), scene.calib);
    scene.cloud = std::move(s.cloud);
    scene.pyramid = std::move(s.pyramid);
    scene.boxes = std::move(s.boxes);
    scene.boxes2d = std::move(s.boxes2d);
    return scene;
  }
  if (cfg.dataset.frame.empty()) {
    throw ConfigError("dataset.frame must name a frame when dataset.root is set");
  }
  scene.frame = cfg.dataset.frame;
  const fs::path root(cfg.dataset.root);
  scene.cloud = load_pointcloud((root / "points" / (scene.frame + ".bin")).string(),
                                cfg.dataset.channels);
  scene.calib = load_calibration((root / "calib" / (scene.frame + ".txt")).string(),
                                 cfg.dataset.image_w, cfg.dataset.image_h);
  const fs::path label_path = root / "labels" / (scene.frame + ".txt");
  if (fs::exists(label_path)) {
    LabelSet labels = load_labels(label_path.string(), cfg.dataset.classes);
    scene.boxes = std::move(labels.boxes);
    scene.boxes2d = std::move(labels.boxes2d);
  }
  const fs::path pyr_path = root / "pyramids" / (scene.frame + ".bin");
  if (!fs::exists(pyr_path)) throw DataError("missing pyramid file: " + pyr_path.string());
  scene.pyramid = load_pyramid(pyr_path.string());
  return scene;
}

struct ForwardArtifacts {
  Scene scene;
  PointCloud cropped;
  ForwardResult result;
};

ForwardArtifacts run_forward(const Config& cfg, uint64_t seed, int threads) {
  ForwardArtifacts fa;
  fa.scene = load_scene(cfg, seed);
  fa.cropped = crop_range(fa.scene.cloud, cfg.dataset.range);
  const PyramidShape shape = PyramidShape::of(fa.scene.pyramid);
  if (cfg.model.variant == "voxel") {
    VoxelPipeline p = build_voxel_pipeline(cfg, shape);
    if (!cfg.model.weights.empty()) apply_tensors(p, load_tensors(cfg.model.weights));
    fa.result = forward_voxel(p, fa.cropped, fa.scene.pyramid, fa.scene.calib, fa.scene.boxes,
                              threads);
  } else {
    fa.cropped = crop_range(fa.scene.cloud, cfg.dataset.range_for_pillars());
    PillarPipeline p = build_pillar_pipeline(cfg, shape);
    if (!cfg.model.weights.empty()) apply_tensors(p, load_tensors(cfg.model.weights));
    fa.result = forward_pillar(p, fa.cropped, fa.scene.pyramid, fa.scene.calib, fa.scene.boxes,
                               threads);
  }
  return fa;
}

std::string scores_csv(const ForwardResult& r) {
  std::string out = "z,y,x,score,label\n";
  char line[96];
  for (size_t i = 0; i < r.head_scores.size(); ++i) {
    const int label = r.head_labels.empty() ? -1 : static_cast<int>(r.head_labels[i]);
    std::snprintf(line, sizeof line, "%d,%d,%d,%.17g,%d\n", r.head_coords[3 * i],
                  r.head_coords[3 * i + 1], r.head_coords[3 * i + 2], r.head_scores[i], label);
    out += line;
  }
  return out;
}

FeaturePyramid bev_as_pyramid(const BevMap& bev) {
  FeaturePyramid pyr;
  PyramidLevel level;
  level.height = bev.height;
  level.width = bev.width;
  level.channels = bev.channels;
  level.data = bev.data;
  pyr.levels.push_back(std::move(level));
  return pyr;
}

json make_manifest(const Config& cfg, uint64_t seed, const std::string& command,
                   const ForwardArtifacts& fa, const std::vector<std::string>& artifact_paths,
                   const std::string& out_dir) {
  json m;
  m["schema_version"] = 1;
  m["tool_version"] = kToolVersion;
  m["command"] = command;
  m["config_hash"] = config_hash_hex(cfg);
  m["config_name"] = cfg.name;
  m["variant"] = cfg.model.variant;
  m["seed"] = seed;
  m["frame"] = fa.scene.frame;
  m["points_in"] = fa.scene.cloud.count;
  m["points_cropped"] = fa.cropped.count;
  m["stage_active"] = fa.result.stage_active;
  m["seg_loss"] = fa.result.seg_loss.value;
  m["seg_loss_empty"] = fa.result.seg_loss.empty;
  m["weighted_loss"] = fa.result.weighted_loss;
  json artifacts;
  for (const auto& rel : artifact_paths) {
    artifacts[rel] = file_hash_hex((fs::path(out_dir) / rel).string());
  }
  m["artifacts"] = artifacts;
  return m;
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

int cmd_synth(const CommonOpts& opts, const std::string& image_path) {
  const Config cfg = resolve_config(opts.config);
  const uint64_t seed = scene_seed(cfg, opts);
  Scene scene = load_scene(cfg, seed);
  if (!scene.synthetic) throw ConfigError("synth requires a config without dataset.root");
  if (!image_path.empty()) {
    scene.pyramid = pyramid_from_image(load_pnm(image_path), cfg.synthetic.pyramid_levels,
                                       cfg.synthetic.pyramid_channels);
  }
  const fs::path root(opts.out_dir);
  for (const char* sub : {"points", "calib", "labels", "pyramids"}) {
    fs::create_directories(root / sub);
  }
  save_pointcloud((root / "points" / (scene.frame + ".bin")).string(), scene.cloud);
  save_calibration((root / "calib" / (scene.frame + ".txt")).string(), scene.calib);
  save_labels((root / "labels" / (scene.frame + ".txt")).string(), scene.boxes, scene.boxes2d,
              cfg.dataset.classes);
  save_pyramid((root / "pyramids" / (scene.frame + ".bin")).string(), scene.pyramid);
  std::printf("synth: frame %s, %d points, %zu boxes -> %s\n", scene.frame.c_str(),
              scene.cloud.count, scene.boxes.size(), opts.out_dir.c_str());
  return 0;
}

int cmd_ingest(const CommonOpts& opts) {
  const Config cfg = resolve_config(opts.config);
  if (cfg.dataset.root.empty()) throw ConfigError("ingest requires dataset.root");
  const fs::path root(cfg.dataset.root);
  if (!fs::is_directory(root / "points")) {
    throw DataError("ingest: missing points directory under " + cfg.dataset.root);
  }
  std::vector<std::string> frames;
  for (const auto& entry : fs::directory_iterator(root / "points")) {
    if (entry.path().extension() == ".bin") frames.push_back(entry.path().stem().string());
  }
  std::sort(frames.begin(), frames.end());

  json stats;
  stats["root"] = cfg.dataset.root;
  stats["frames"] = frames.size();
  int64_t total_points = 0;
  std::map<std::string, int> class_counts;
  std::vector<std::string> rejected;
  for (const auto& frame : frames) {
    const PointCloud pc =
        load_pointcloud((root / "points" / (frame + ".bin")).string(), cfg.dataset.channels);
    total_points += pc.count;
    const fs::path calib_path = root / "calib" / (frame + ".txt");
    if (fs::exists(calib_path)) {
      load_calibration(calib_path.string(), cfg.dataset.image_w, cfg.dataset.image_h);
    }
    const fs::path label_path = root / "labels" / (frame + ".txt");
    if (fs::exists(label_path)) {
      const LabelSet labels = load_labels(label_path.string(), cfg.dataset.classes);
      for (const Box3D& b : labels.boxes) class_counts[cfg.dataset.classes[b.class_id]] += 1;
      for (const auto& name : labels.rejected_classes) {
        if (std::find(rejected.begin(), rejected.end(), name) == rejected.end()) {
          rejected.push_back(name);
        }
      }
    }
  }
  stats["total_points"] = total_points;
  stats["boxes_per_class"] = class_counts;
  stats["rejected_classes"] = rejected;
  const std::string text = stats.dump(2) + "\n";
  std::fputs(text.c_str(), stdout);
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    write_text((fs::path(opts.out_dir) / "ingest.json").string(), text);
  }
  return 0;
}

int cmd_forward(const CommonOpts& opts) {
  const Config cfg = resolve_config(opts.config);
  const uint64_t seed = scene_seed(cfg, opts);
  ForwardArtifacts fa = run_forward(cfg, seed, opts.threads);

  fs::create_directories(opts.out_dir);
  const fs::path out(opts.out_dir);
  std::vector<std::string> artifacts;

  save_pyramid((out / "bev.bin").string(), bev_as_pyramid(fa.result.bev));
  artifacts.push_back("bev.bin");
  write_text((out / "scores.csv").string(), scores_csv(fa.result));
  artifacts.push_back("scores.csv");
  if (!fa.scene.boxes.empty()) {
    // Pass-through detection head: re-emits the ground truth with its scores
    // so the metric tooling has a detections file to chew on.
    save_labels((out / "detections.txt").string(), fa.scene.boxes, {}, cfg.dataset.classes, true);
    artifacts.push_back("detections.txt");
  }
  write_text((out / "config.resolved.json").string(), cfg.to_json().dump(2) + "\n");
  artifacts.push_back("config.resolved.json");

  const json manifest = make_manifest(cfg, seed, "forward", fa, artifacts, opts.out_dir);
  write_text((out / "manifest.json").string(), manifest.dump(2) + "\n");
  std::printf("forward: %s frame %s, %d voxels scored, BEV %dx%dx%d -> %s\n",
              cfg.model.variant.c_str(), fa.scene.frame.c_str(),
              static_cast<int>(fa.result.head_scores.size()), fa.result.bev.height,
              fa.result.bev.width, fa.result.bev.channels, opts.out_dir.c_str());
  return 0;
}

int cmd_analyze_blur(const CommonOpts& opts) {
  const Config cfg = resolve_config(opts.config);
  const uint64_t seed = scene_seed(cfg, opts);
  ForwardArtifacts fa = run_forward(cfg, seed, opts.threads);
  if (fa.result.head_scores.empty()) {
    throw ConfigError("analyze-blur requires the semantic head (model.seg_head_stage)");
  }

  std::vector<Region2D> regions;
  std::vector<Box3D> region_boxes;
  for (size_t i = 0; i < fa.scene.boxes2d.size(); ++i) {
    if (fa.scene.boxes2d[i]) {
      regions.emplace_back(*fa.scene.boxes2d[i]);
      region_boxes.push_back(fa.scene.boxes[i]);
    }
  }
  if (regions.empty()) throw DataError("analyze-blur: labels carry no 2D regions");

  // Threshold curves over the semantic-head centroids.
  const auto classes = classify_blur_points(fa.result.head_centroids.centroid, regions,
                                            fa.scene.boxes, fa.scene.calib);
  const BlurCurves curves = blur_curves(fa.result.head_scores, classes);

  fs::create_directories(opts.out_dir);
  const fs::path out(opts.out_dir);
  std::string csv = "tau,r_blur,r_fore\n";
  char line[96];
  for (size_t i = 0; i < curves.tau.size(); ++i) {
    std::snprintf(line, sizeof line, "%.2f,%.17g,%.17g\n", curves.tau[i], curves.r_blur[i],
                  curves.r_fore[i]);
    csv += line;
  }
  write_text((out / "blur_curves.csv").string(), csv);

  // Per-class instance ratios over the raw (cropped) radar points.
  std::vector<Vec3> points(fa.cropped.count);
  for (int i = 0; i < fa.cropped.count; ++i) points[i] = fa.cropped.xyz(i);
  const auto table = instance_ratio_table(points, regions, region_boxes, fa.scene.calib);
  std::string ratio_csv = "class,instances,mean_ratio\n";
  for (const auto& [cls, row] : table) {
    std::snprintf(line, sizeof line, "%s,%d,%.17g\n", cfg.dataset.classes[cls].c_str(),
                  row.instances, row.mean_ratio);
    ratio_csv += line;
  }
  write_text((out / "ratio_table.csv").string(), ratio_csv);

  std::printf("analyze-blur: %zu regions, %s curves -> %s\n", regions.size(),
              curves.defined ? "defined" : "undefined", opts.out_dir.c_str());
  return curves.defined ? 0 : 3;
}

int cmd_eval(const CommonOpts& opts, const std::string& dets_path, const std::string& gt_path) {
  const Config cfg = resolve_config(opts.config);
  const uint64_t seed = scene_seed(cfg, opts);

  std::vector<Box3D> gts;
  CalibrationSet calib;
  if (!gt_path.empty()) {
    gts = load_labels(gt_path, cfg.dataset.classes).boxes;
    calib = synthetic_calibration(cfg.dataset.image_w, cfg.dataset.image_h);
  } else {
    Scene scene = load_scene(cfg, seed);
    gts = scene.boxes;
    calib = scene.calib;
  }
  std::vector<Box3D> dets =
      dets_path.empty() ? gts : load_labels(dets_path, cfg.dataset.classes).boxes;

  fs::create_directories(opts.out_dir);
  std::string table_csv = "class,regime,ap_points,ap\n";
  std::string pr_csv = "class,regime,score,precision,recall\n";
  char line[160];
  for (const char* regime : {"eaa", "dc"}) {
    const bool corridor = std::string(regime) == "dc";
    const std::vector<Box3D> r_dets = corridor ? corridor_filter(dets, calib) : dets;
    const std::vector<Box3D> r_gts = corridor ? corridor_filter(gts, calib) : gts;
    for (const int points : {11, 40}) {
      EvalConfig ec = cfg.eval_config();
      ec.ap_points = points;
      std::map<int, PrCurve> curves;
      const auto ap = compute_ap(r_dets, r_gts, ec, points == 11 ? &curves : nullptr);
      for (const auto& [cls, value] : ap) {
        if (value) {
          std::snprintf(line, sizeof line, "%s,%s,%d,%.17g\n", cfg.dataset.classes[cls].c_str(),
                        regime, points, *value);
        } else {
          std::snprintf(line, sizeof line, "%s,%s,%d,\n", cfg.dataset.classes[cls].c_str(),
                        regime, points);
        }
        table_csv += line;
      }
      for (const auto& [cls, curve] : curves) {
        for (size_t i = 0; i < curve.score.size(); ++i) {
          std::snprintf(line, sizeof line, "%s,%s,%.17g,%.17g,%.17g\n",
                        cfg.dataset.classes[cls].c_str(), regime, curve.score[i],
                        curve.precision[i], curve.recall[i]);
          pr_csv += line;
        }
      }
    }
  }
  write_text((fs::path(opts.out_dir) / "ap_tables.csv").string(), table_csv);
  write_text((fs::path(opts.out_dir) / "pr_curves.csv").string(), pr_csv);
  std::fputs(table_csv.c_str(), stdout);
  return 0;
}

int cmd_dump_weights(const CommonOpts& opts, std::string out_path) {
  const Config cfg = resolve_config(opts.config);
  const PyramidShape shape{
      std::vector<int>(cfg.synthetic.pyramid_levels, cfg.synthetic.pyramid_channels)};
  TensorMap tensors;
  if (cfg.model.variant == "voxel") {
    VoxelPipeline p = build_voxel_pipeline(cfg, shape);
    if (!cfg.model.weights.empty()) apply_tensors(p, load_tensors(cfg.model.weights));
    tensors = collect_tensors(p);
  } else {
    PillarPipeline p = build_pillar_pipeline(cfg, shape);
    if (!cfg.model.weights.empty()) apply_tensors(p, load_tensors(cfg.model.weights));
    tensors = collect_tensors(p);
  }
  if (out_path.empty()) {
    fs::create_directories(opts.out_dir);
    out_path = (fs::path(opts.out_dir) / "weights.bin").string();
  }
  save_tensors(out_path, tensors);
  std::printf("dump-weights: %zu tensors -> %s\n", tensors.size(), out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"4D radar + camera fusion pipeline"};
  app.require_subcommand(1);

  CommonOpts synth_opts, ingest_opts, forward_opts, blur_opts, eval_opts, dump_opts;
  std::string synth_image, eval_dets, eval_gt, dump_out;

  CLI::App* synth = app.add_subcommand("synth", "Write a synthetic dataset frame");
  add_common(synth, synth_opts);
  synth->add_option("--image", synth_image, "Build the pyramid from a PGM/PPM image");

  CLI::App* ingest = app.add_subcommand("ingest", "Scan and validate a dataset directory");
  add_common(ingest, ingest_opts);

  CLI::App* forward = app.add_subcommand("forward", "Run the fusion pipeline on one frame");
  add_common(forward, forward_opts);

  CLI::App* blur = app.add_subcommand("analyze-blur", "Feature-blurring diagnostics");
  add_common(blur, blur_opts);

  CLI::App* eval = app.add_subcommand("eval", "Average-precision tables");
  add_common(eval, eval_opts);
  eval->add_option("--dets", eval_dets, "Detections file (label format with scores)");
  eval->add_option("--gt", eval_gt, "Ground-truth label file");

  CLI::App* dump = app.add_subcommand("dump-weights", "Write all layer parameters");
  add_common(dump, dump_opts);
  dump->add_option("--out", dump_out, "Weights file path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_opts, synth_image);
    if (ingest->parsed()) return cmd_ingest(ingest_opts);
    if (forward->parsed()) return cmd_forward(forward_opts);
    if (blur->parsed()) return cmd_analyze_blur(blur_opts);
    if (eval->parsed()) return cmd_eval(eval_opts, eval_dets, eval_gt);
    if (dump->parsed()) return cmd_dump_weights(dump_opts, dump_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
