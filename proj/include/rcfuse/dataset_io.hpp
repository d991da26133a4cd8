#pragma once

// Ingest for KITTI-style directory layouts: float32 .bin point clouds,
// calibration and label text files, the feature-pyramid container, and a
// deterministic synthetic scene generator.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rcfuse/common.hpp"
#include "rcfuse/geometry.hpp"
#include "rcfuse/nn_kernels.hpp"

namespace rcf {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and read/written natively");

// ---------------------------------------------------------------------------
// Domain types.
// ---------------------------------------------------------------------------

// Point clouds are stored as float32 exactly as on disk; the first three
// schema channels must be x, y, z in meters.
struct PointCloud {
  int count = 0;
  int channels = 0;
  std::vector<float> data;  // count x channels, row-major
  std::vector<std::string> schema;
  std::string frame_id;

  std::span<const float> row(int i) const {
    return {data.data() + static_cast<size_t>(i) * channels, static_cast<size_t>(channels)};
  }
  Vec3 xyz(int i) const {
    const float* p = data.data() + static_cast<size_t>(i) * channels;
    return {p[0], p[1], p[2]};
  }
};

inline std::vector<std::string> schema_vod7() {
  return {"x", "y", "z", "RCS", "v_r", "v_rc", "t"};
}
inline std::vector<std::string> schema_tj4d5() { return {"x", "y", "z", "v_rc", "Power"}; }

// Oriented 3D box in the radar frame; `center` is the geometric center and
// yaw rotates the length axis about +z. Ground truth carries score 1.0.
struct Box3D {
  Vec3 center;
  double length = 0.0;
  double width = 0.0;
  double height = 0.0;
  double yaw = 0.0;  // (-pi, pi]
  int class_id = 0;
  double score = 1.0;
};

// Closed-boundary containment test: rotate into the box frame, then compare
// against the axis-aligned half extents.
inline bool point_in_box3d(Vec3 p, const Box3D& b) {
  const double dx = p.x - b.center.x;
  const double dy = p.y - b.center.y;
  const double dz = p.z - b.center.z;
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.length && std::abs(ly) <= 0.5 * b.width &&
         std::abs(dz) <= 0.5 * b.height;
}

// Axis-aligned 2D image region, pixels, closed bounds.
struct Box2D {
  double u1 = 0.0, v1 = 0.0, u2 = 0.0, v2 = 0.0;

  bool contains(double u, double v) const { return u >= u1 && u <= u2 && v >= v1 && v <= v2; }
};

struct RangeSpec {
  Vec3 min;
  Vec3 max;

  void validate() const {
    if (!(min.x < max.x && min.y < max.y && min.z < max.z)) {
      throw ConfigError("range: min must be below max on every axis");
    }
  }
  bool contains(Vec3 p) const {
    return p.x >= min.x && p.x < max.x && p.y >= min.y && p.y < max.y && p.z >= min.z &&
           p.z < max.z;
  }
};

struct LabelSet {
  std::vector<Box3D> boxes;
  std::vector<std::optional<Box2D>> boxes2d;  // parallel to boxes
  std::vector<std::string> rejected_classes;  // unknown class names, reported once each
};

// ---------------------------------------------------------------------------
// Point cloud .bin files: little-endian float32, row-major N x C.
// ---------------------------------------------------------------------------

inline PointCloud load_pointcloud(const std::string& path, std::vector<std::string> schema) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("pointcloud: cannot open: " + path);
  std::fseek(f, 0, SEEK_END);
  const long bytes = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);

  PointCloud pc;
  pc.channels = static_cast<int>(schema.size());
  pc.schema = std::move(schema);
  const long row_bytes = 4L * pc.channels;
  if (bytes % row_bytes != 0) {
    std::fclose(f);
    throw DataError("pointcloud: " + path + " has " + std::to_string(bytes) +
                    " bytes, expected a multiple of " + std::to_string(row_bytes));
  }
  pc.count = static_cast<int>(bytes / row_bytes);
  pc.data.resize(static_cast<size_t>(pc.count) * pc.channels);
  if (pc.count > 0 && std::fread(pc.data.data(), 1, bytes, f) != static_cast<size_t>(bytes)) {
    std::fclose(f);
    throw DataError("pointcloud: short read: " + path);
  }
  std::fclose(f);
  return pc;
}

inline void save_pointcloud(const std::string& path, const PointCloud& pc) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("pointcloud: cannot open for writing: " + path);
  const size_t n = pc.data.size() * 4;
  if (n > 0 && std::fwrite(pc.data.data(), 1, n, f) != n) {
    std::fclose(f);
    throw DataError("pointcloud: short write: " + path);
  }
  std::fclose(f);
}

// Keeps points with min <= p < max on every axis; order preserved.
inline PointCloud crop_range(const PointCloud& pc, const RangeSpec& r) {
  PointCloud out;
  out.channels = pc.channels;
  out.schema = pc.schema;
  out.frame_id = pc.frame_id;
  for (int i = 0; i < pc.count; ++i) {
    if (r.contains(pc.xyz(i))) {
      const auto row = pc.row(i);
      out.data.insert(out.data.end(), row.begin(), row.end());
      ++out.count;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label text files: one object per line,
//   class l w h x y z yaw [score] [u1 v1 u2 v2]
// Lines have 8, 9, 12, or 13 tokens; the 9/13 forms carry a detection score.
// Unknown class names go to the reject list and the line is skipped.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_double(const std::string& tok, const std::string& ctx) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw DataError(ctx + ": bad number '" + tok + "'");
  return v;
}

inline std::vector<std::string> read_lines(const std::string& path, const std::string& what) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError(what + ": cannot open: " + path);
  std::string text;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
  std::fclose(f);
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace detail

inline LabelSet load_labels(const std::string& path, std::span<const std::string> class_names) {
  LabelSet out;
  const auto lines = detail::read_lines(path, "labels");
  for (size_t ln = 0; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto toks = detail::split_ws(lines[ln]);
    if (toks.size() != 8 && toks.size() != 9 && toks.size() != 12 && toks.size() != 13) {
      throw DataError("labels: " + path + ":" + std::to_string(ln + 1) + ": expected 8, 9, 12," +
                      " or 13 fields, got " + std::to_string(toks.size()));
    }
    const auto it = std::find(class_names.begin(), class_names.end(), toks[0]);
    if (it == class_names.end()) {
      if (std::find(out.rejected_classes.begin(), out.rejected_classes.end(), toks[0]) ==
          out.rejected_classes.end()) {
        out.rejected_classes.push_back(toks[0]);
      }
      continue;
    }
    const std::string ctx = "labels: " + path + ":" + std::to_string(ln + 1);
    Box3D b;
    b.class_id = static_cast<int>(it - class_names.begin());
    b.length = detail::parse_double(toks[1], ctx);
    b.width = detail::parse_double(toks[2], ctx);
    b.height = detail::parse_double(toks[3], ctx);
    b.center = {detail::parse_double(toks[4], ctx), detail::parse_double(toks[5], ctx),
                detail::parse_double(toks[6], ctx)};
    b.yaw = wrap_angle(detail::parse_double(toks[7], ctx));
    if (!(b.length > 0.0 && b.width > 0.0 && b.height > 0.0)) {
      throw DataError(ctx + ": box dimensions must be positive");
    }
    const bool has_score = toks.size() == 9 || toks.size() == 13;
    if (has_score) b.score = detail::parse_double(toks[8], ctx);
    std::optional<Box2D> box2d;
    if (toks.size() >= 12) {
      const size_t o = has_score ? 9 : 8;
      box2d = Box2D{detail::parse_double(toks[o], ctx), detail::parse_double(toks[o + 1], ctx),
                    detail::parse_double(toks[o + 2], ctx),
                    detail::parse_double(toks[o + 3], ctx)};
    }
    out.boxes.push_back(b);
    out.boxes2d.push_back(box2d);
  }
  return out;
}

inline void save_labels(const std::string& path, std::span<const Box3D> boxes,
                        std::span<const std::optional<Box2D>> boxes2d,
                        std::span<const std::string> class_names, bool with_score = false) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("labels: cannot open for writing: " + path);
  for (size_t i = 0; i < boxes.size(); ++i) {
    const Box3D& b = boxes[i];
    std::fprintf(f, "%s %.17g %.17g %.17g %.17g %.17g %.17g %.17g",
                 class_names[b.class_id].c_str(), b.length, b.width, b.height, b.center.x,
                 b.center.y, b.center.z, b.yaw);
    if (with_score) std::fprintf(f, " %.17g", b.score);
    if (i < boxes2d.size() && boxes2d[i]) {
      const Box2D& r = *boxes2d[i];
      std::fprintf(f, " %.17g %.17g %.17g %.17g", r.u1, r.v1, r.u2, r.v2);
    }
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

// ---------------------------------------------------------------------------
// Calibration text files, KITTI-style:
//   P2: <12 floats>                 row-major 3x4 intrinsic
//   Tr_radar_to_cam: <12 floats>    row-major 3x4, bottom row (0,0,0,1) implied
//   image_size: <W> <H>             optional; may instead come from config
// ---------------------------------------------------------------------------

inline CalibrationSet load_calibration(const std::string& path, int default_w = 0,
                                       int default_h = 0) {
  CalibrationSet calib;
  calib.image_w = default_w;
  calib.image_h = default_h;
  calib.radar_to_camera[15] = 1.0;
  bool have_p2 = false, have_tr = false;
  const auto lines = detail::read_lines(path, "calibration");
  for (size_t ln = 0; ln < lines.size(); ++ln) {
    const auto toks = detail::split_ws(lines[ln]);
    if (toks.empty()) continue;
    const std::string ctx = "calibration: " + path + ":" + std::to_string(ln + 1);
    if (toks[0] == "P2:") {
      if (toks.size() != 13) throw DataError(ctx + ": P2 needs 12 values");
      for (int i = 0; i < 12; ++i) calib.intrinsic[i] = detail::parse_double(toks[i + 1], ctx);
      have_p2 = true;
    } else if (toks[0] == "Tr_radar_to_cam:") {
      if (toks.size() != 13) throw DataError(ctx + ": Tr_radar_to_cam needs 12 values");
      for (int i = 0; i < 12; ++i) {
        calib.radar_to_camera[i] = detail::parse_double(toks[i + 1], ctx);
      }
      have_tr = true;
    } else if (toks[0] == "image_size:") {
      if (toks.size() != 3) throw DataError(ctx + ": image_size needs 2 values");
      calib.image_w = static_cast<int>(detail::parse_double(toks[1], ctx));
      calib.image_h = static_cast<int>(detail::parse_double(toks[2], ctx));
    }
  }
  if (!have_p2) throw DataError("calibration: " + path + ": missing P2 line");
  if (!have_tr) throw DataError("calibration: " + path + ": missing Tr_radar_to_cam line");
  calib.validate();
  return calib;
}

inline void save_calibration(const std::string& path, const CalibrationSet& calib) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("calibration: cannot open for writing: " + path);
  std::fprintf(f, "P2:");
  for (double v : calib.intrinsic) std::fprintf(f, " %.17g", v);
  std::fprintf(f, "\nTr_radar_to_cam:");
  for (int i = 0; i < 12; ++i) std::fprintf(f, " %.17g", calib.radar_to_camera[i]);
  std::fprintf(f, "\nimage_size: %d %d\n", calib.image_w, calib.image_h);
  std::fclose(f);
}

// ---------------------------------------------------------------------------
// Feature pyramid container: "FPY1" magic, u32 level count, u32 (H, W, C) per
// level, then float32 LE planes in level order.
// ---------------------------------------------------------------------------

inline void save_pyramid(const std::string& path, const FeaturePyramid& pyr) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("pyramid: cannot open for writing: " + path);
  const auto put = [&](const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f) != n) {
      std::fclose(f);
      throw DataError("pyramid: short write: " + path);
    }
  };
  put("FPY1", 4);
  const uint32_t n_levels = static_cast<uint32_t>(pyr.levels.size());
  put(&n_levels, 4);
  for (const auto& level : pyr.levels) {
    const uint32_t hwc[3] = {static_cast<uint32_t>(level.height),
                             static_cast<uint32_t>(level.width),
                             static_cast<uint32_t>(level.channels)};
    put(hwc, 12);
  }
  for (const auto& level : pyr.levels) {
    std::vector<float> plane(level.data.begin(), level.data.end());
    put(plane.data(), 4 * plane.size());
  }
  std::fclose(f);
}

inline FeaturePyramid load_pyramid(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("pyramid: cannot open: " + path);
  const auto get = [&](void* p, size_t n) {
    if (std::fread(p, 1, n, f) != n) {
      std::fclose(f);
      throw DataError("pyramid: truncated file: " + path);
    }
  };
  char magic[4];
  get(magic, 4);
  if (std::memcmp(magic, "FPY1", 4) != 0) throw DataError("pyramid: bad magic: " + path);
  uint32_t n_levels = 0;
  get(&n_levels, 4);
  FeaturePyramid pyr;
  pyr.levels.resize(n_levels);
  for (auto& level : pyr.levels) {
    uint32_t hwc[3];
    get(hwc, 12);
    level.height = static_cast<int>(hwc[0]);
    level.width = static_cast<int>(hwc[1]);
    level.channels = static_cast<int>(hwc[2]);
  }
  for (auto& level : pyr.levels) {
    std::vector<float> plane(static_cast<size_t>(level.height) * level.width * level.channels);
    get(plane.data(), 4 * plane.size());
    level.data.assign(plane.begin(), plane.end());
  }
  std::fclose(f);
  return pyr;
}

// ---------------------------------------------------------------------------
// Minimal PGM (P5) / PPM (P6) reader, 8-bit, for feeding real images into the
// pyramid generator.
// ---------------------------------------------------------------------------

struct PnmImage {
  int width = 0;
  int height = 0;
  int components = 0;  // 1 or 3
  std::vector<uint8_t> data;
};

inline PnmImage load_pnm(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("image: cannot open: " + path);
  const auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = std::fgetc(f)) != EOF) {
      if (c == '#') {
        while ((c = std::fgetc(f)) != EOF && c != '\n') {
        }
      } else if (!std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        while ((c = std::fgetc(f)) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
        break;
      }
    }
    return tok;
  };
  const std::string magic = next_token();
  PnmImage img;
  if (magic == "P5") {
    img.components = 1;
  } else if (magic == "P6") {
    img.components = 3;
  } else {
    std::fclose(f);
    throw DataError("image: " + path + ": expected P5 or P6");
  }
  img.width = std::atoi(next_token().c_str());
  img.height = std::atoi(next_token().c_str());
  const int maxval = std::atoi(next_token().c_str());
  if (img.width <= 0 || img.height <= 0 || maxval != 255) {
    std::fclose(f);
    throw DataError("image: " + path + ": unsupported header");
  }
  const size_t n = static_cast<size_t>(img.width) * img.height * img.components;
  img.data.resize(n);
  if (std::fread(img.data.data(), 1, n, f) != n) {
    std::fclose(f);
    throw DataError("image: truncated pixel data: " + path);
  }
  std::fclose(f);
  return img;
}

// Box-filter pyramid from an image: level i is downsampled by 4 * 2^i and the
// requested channels cycle through the image components, scaled to [0, 1].
inline FeaturePyramid pyramid_from_image(const PnmImage& img, int n_levels, int channels) {
  FeaturePyramid pyr;
  for (int i = 0; i < n_levels; ++i) {
    const int factor = 4 << i;
    PyramidLevel level;
    level.height = std::max(1, img.height / factor);
    level.width = std::max(1, img.width / factor);
    level.channels = channels;
    level.data.assign(static_cast<size_t>(level.height) * level.width * channels, 0.0);
    for (int y = 0; y < level.height; ++y) {
      for (int x = 0; x < level.width; ++x) {
        for (int c = 0; c < channels; ++c) {
          const int comp = c % img.components;
          double acc = 0.0;
          int taps = 0;
          for (int dy = 0; dy < factor; ++dy) {
            const int sy = y * factor + dy;
            if (sy >= img.height) break;
            for (int dx = 0; dx < factor; ++dx) {
              const int sx = x * factor + dx;
              if (sx >= img.width) break;
              acc += img.data[(static_cast<size_t>(sy) * img.width + sx) * img.components + comp];
              ++taps;
            }
          }
          level.at(y, x, c) = taps > 0 ? acc / (255.0 * taps) : 0.0;
        }
      }
    }
    pyr.levels.push_back(std::move(level));
  }
  return pyr;
}

// ---------------------------------------------------------------------------
// Synthetic scenes: deterministic in the seed, every box contains at least
// one radar point, and each box gets a 2D region from its projected corners.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  RangeSpec range;
  std::vector<std::string> schema = schema_vod7();
  int n_boxes = 5;
  int n_points = 800;
  int n_classes = 3;
  int pyramid_levels = 4;
  int pyramid_channels = 8;
  int pyramid_base_h = 64;
  int pyramid_base_w = 96;
};

struct SyntheticScene {
  PointCloud cloud;
  std::vector<Box3D> boxes;
  std::vector<std::optional<Box2D>> boxes2d;
  FeaturePyramid pyramid;
};

namespace detail {

// Channel value ranges for non-geometry channels, by schema name.
inline float synth_channel_value(const std::string& name, SplitMix64& rng) {
  if (name == "RCS") return static_cast<float>(rng.uniform(0.0, 40.0));
  if (name == "v_r" || name == "v_rc") return static_cast<float>(rng.uniform(-8.0, 8.0));
  if (name == "t") return static_cast<float>(rng.below(5));
  if (name == "Power") return static_cast<float>(rng.uniform(5.0, 40.0));
  return static_cast<float>(rng.uniform(0.0, 1.0));
}

inline void push_point(PointCloud& pc, Vec3 p, SplitMix64& rng) {
  pc.data.push_back(static_cast<float>(p.x));
  pc.data.push_back(static_cast<float>(p.y));
  pc.data.push_back(static_cast<float>(p.z));
  for (int c = 3; c < pc.channels; ++c) pc.data.push_back(synth_channel_value(pc.schema[c], rng));
  ++pc.count;
}

}  // namespace detail

// Values are quantized to float32 so that a pyramid written to disk and read
// back is identical to the in-memory one.
inline FeaturePyramid generate_synthetic_pyramid(uint64_t seed, int n_levels, int channels,
                                                 int base_h, int base_w) {
  SplitMix64 rng(name_seed(seed, "synthetic.pyramid"));
  FeaturePyramid pyr;
  int h = base_h, w = base_w;
  for (int i = 0; i < n_levels; ++i) {
    PyramidLevel level;
    level.height = std::max(1, h);
    level.width = std::max(1, w);
    level.channels = channels;
    level.data.resize(static_cast<size_t>(level.height) * level.width * channels);
    for (auto& v : level.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    pyr.levels.push_back(std::move(level));
    h /= 2;
    w /= 2;
  }
  return pyr;
}

inline SyntheticScene generate_synthetic_scene(uint64_t seed, const SyntheticSpec& spec,
                                               const CalibrationSet& calib) {
  spec.range.validate();
  SplitMix64 rng(name_seed(seed, "synthetic.scene"));
  SyntheticScene scene;
  scene.cloud.channels = static_cast<int>(spec.schema.size());
  scene.cloud.schema = spec.schema;
  scene.cloud.frame_id = "synthetic_" + std::to_string(seed);

  const Vec3 lo = spec.range.min;
  const Vec3 hi = spec.range.max;
  for (int b = 0; b < spec.n_boxes; ++b) {
    Box3D box;
    box.class_id = static_cast<int>(rng.below(static_cast<uint64_t>(std::max(1, spec.n_classes))));
    box.length = rng.uniform(1.0, 4.5);
    box.width = rng.uniform(0.5, 2.0);
    box.height = rng.uniform(1.0, 2.0);
    box.yaw = wrap_angle(rng.uniform(-M_PI, M_PI));
    const double r = 0.5 * std::hypot(box.length, box.width);
    const auto place = [&](double a, double b2, double margin) {
      const double m_lo = a + margin, m_hi = b2 - margin;
      return m_lo < m_hi ? rng.uniform(m_lo, m_hi) : 0.5 * (a + b2);
    };
    box.center = {place(lo.x, hi.x, r), place(lo.y, hi.y, r),
                  place(lo.z, hi.z, 0.5 * box.height)};
    scene.boxes.push_back(box);
  }

  // Foreground points: at least one per box, drawn strictly inside the box so
  // the float32 cast cannot push them across a face.
  for (const Box3D& box : scene.boxes) {
    const int n_fg = 1 + static_cast<int>(rng.below(8));
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    for (int i = 0; i < n_fg; ++i) {
      const double bx = rng.uniform(-0.45, 0.45) * box.length;
      const double by = rng.uniform(-0.45, 0.45) * box.width;
      const double bz = rng.uniform(-0.45, 0.45) * box.height;
      const Vec3 p{box.center.x + c * bx - s * by, box.center.y + s * bx + c * by,
                   box.center.z + bz};
      detail::push_point(scene.cloud, p, rng);
    }
  }
  while (scene.cloud.count < spec.n_points) {
    detail::push_point(scene.cloud,
                       {rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)},
                       rng);
  }

  // 2D regions: image-space bounding box of the projected corners.
  for (const Box3D& box : scene.boxes) {
    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    double u1 = 1e30, v1 = 1e30, u2 = -1e30, v2 = -1e30;
    bool any = false;
    for (int corner = 0; corner < 8; ++corner) {
      const double bx = (corner & 1 ? 0.5 : -0.5) * box.length;
      const double by = (corner & 2 ? 0.5 : -0.5) * box.width;
      const double bz = (corner & 4 ? 0.5 : -0.5) * box.height;
      const Vec3 p{box.center.x + c * bx - s * by, box.center.y + s * bx + c * by,
                   box.center.z + bz};
      const ProjectedPoint proj = project_point(p, calib);
      if (proj.depth <= kMinProjectionDepth) continue;
      u1 = std::min(u1, proj.u);
      v1 = std::min(v1, proj.v);
      u2 = std::max(u2, proj.u);
      v2 = std::max(v2, proj.v);
      any = true;
    }
    if (any) {
      u1 = std::max(u1, 0.0);
      v1 = std::max(v1, 0.0);
      u2 = std::min(u2, static_cast<double>(calib.image_w - 1));
      v2 = std::min(v2, static_cast<double>(calib.image_h - 1));
    }
    if (any && u1 <= u2 && v1 <= v2) {
      scene.boxes2d.emplace_back(Box2D{u1, v1, u2, v2});
    } else {
      scene.boxes2d.emplace_back(std::nullopt);
    }
  }

  scene.pyramid = generate_synthetic_pyramid(seed, spec.pyramid_levels, spec.pyramid_channels,
                                             spec.pyramid_base_h, spec.pyramid_base_w);
  return scene;
}

// Simple forward-looking camera used by synthetic scenes: radar +x becomes
// camera +z, radar +y becomes camera -x, radar +z becomes camera -y.
inline CalibrationSet synthetic_calibration(int image_w, int image_h) {
  CalibrationSet calib;
  calib.image_w = image_w;
  calib.image_h = image_h;
  const double f = 0.8 * image_w;
  calib.intrinsic = {f, 0, image_w / 2.0, 0,  //
                     0, f, image_h / 2.0, 0,  //
                     0, 0, 1, 0};
  calib.radar_to_camera = {0, -1, 0, 0,  //
                           0, 0, -1, 0,  //
                           1, 0, 0, 0,   //
                           0, 0, 0, 1};
  return calib;
}

}  // namespace rcf
