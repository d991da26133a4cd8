#pragma once

// Detection metrics and diagnostics: rotated BEV IoU via convex polygon
// clipping, 3D IoU, interpolated average precision (11- and 40-point),
// driving-corridor filtering, and the feature-blurring point statistics.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "rcfuse/common.hpp"
#include "rcfuse/dataset_io.hpp"
#include "rcfuse/geometry.hpp"

namespace rcf {

// ---------------------------------------------------------------------------
// Rotated-box IoU.
// ---------------------------------------------------------------------------

inline std::array<Vec2, 4> box_bev_corners(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  std::array<Vec2, 4> out;
  const double dx[4] = {hl, hl, -hl, -hl};
  const double dy[4] = {-hw, hw, hw, -hw};
  for (int i = 0; i < 4; ++i) {
    out[i] = {b.center.x + c * dx[i] - s * dy[i], b.center.y + s * dx[i] + c * dy[i]};
  }
  return out;
}

namespace detail {

// Sutherland-Hodgman: clip a convex polygon against the half-plane on the
// left of edge a->b.
inline std::vector<Vec2> clip_against_edge(const std::vector<Vec2>& poly, Vec2 a, Vec2 b) {
  std::vector<Vec2> out;
  const auto side = [&](Vec2 p) {
    return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
  };
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2 cur = poly[i];
    const Vec2 prev = poly[(i + n - 1) % n];
    const double sc = side(cur), sp = side(prev);
    const auto intersect = [&]() {
      const double t = sp / (sp - sc);
      return Vec2{prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)};
    };
    if (sc >= 0.0) {
      if (sp < 0.0) out.push_back(intersect());
      out.push_back(cur);
    } else if (sp >= 0.0) {
      out.push_back(intersect());
    }
  }
  return out;
}

inline double shoelace_area(const std::vector<Vec2>& poly) {
  double acc = 0.0;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    acc += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(acc);
}

}  // namespace detail

// Intersection area of the two BEV rectangles.
inline double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = box_bev_corners(a);
  const auto cb = box_bev_corners(b);
  std::vector<Vec2> poly(ca.begin(), ca.end());
  for (int e = 0; e < 4 && !poly.empty(); ++e) {
    poly = detail::clip_against_edge(poly, cb[e], cb[(e + 1) % 4]);
  }
  return poly.size() < 3 ? 0.0 : detail::shoelace_area(poly);
}

// Box areas use the same shoelace measure as the clipped intersection, so
// identical boxes yield exactly 1 and disjoint boxes exactly 0.
inline double rotated_iou_bev(const Box3D& a, const Box3D& b) {
  const auto ca = box_bev_corners(a);
  const auto cb = box_bev_corners(b);
  const double area_a = detail::shoelace_area({ca.begin(), ca.end()});
  const double area_b = detail::shoelace_area({cb.begin(), cb.end()});
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b);
  const double denom = area_a + area_b - inter;
  return denom > 0.0 ? inter / denom : 0.0;
}

inline double iou_3d(const Box3D& a, const Box3D& b) {
  const auto ca = box_bev_corners(a);
  const auto cb = box_bev_corners(b);
  const double area_a = detail::shoelace_area({ca.begin(), ca.end()});
  const double area_b = detail::shoelace_area({cb.begin(), cb.end()});
  // One consistent z-extent measure for volumes and overlap.
  const auto z_bot = [](const Box3D& x) { return x.center.z - 0.5 * x.height; };
  const auto z_top = [](const Box3D& x) { return x.center.z + 0.5 * x.height; };
  const double vol_a = area_a * (z_top(a) - z_bot(a));
  const double vol_b = area_b * (z_top(b) - z_bot(b));
  if (vol_a <= 0.0 || vol_b <= 0.0) return 0.0;
  const double overlap =
      std::max(0.0, std::min(z_top(a), z_top(b)) - std::max(z_bot(a), z_bot(b)));
  const double inter = bev_intersection_area(a, b) * overlap;
  const double denom = vol_a + vol_b - inter;
  return denom > 0.0 ? inter / denom : 0.0;
}

// ---------------------------------------------------------------------------
// Average precision.
// ---------------------------------------------------------------------------

struct EvalConfig {
  std::map<int, double> iou_thresholds;  // class id -> threshold in (0, 1]
  enum class Regime { kEntireArea, kDrivingCorridor };
  Regime regime = Regime::kEntireArea;
  int ap_points = 11;  // 11 or 40
  enum class IouKind { kBev, k3d };
  IouKind iou_kind = IouKind::k3d;

  // Driving-corridor bounds, camera frame, meters.
  static constexpr double kCorridorXMin = -4.0;
  static constexpr double kCorridorXMax = 4.0;
  static constexpr double kCorridorZMax = 25.0;

  void validate() const {
    for (const auto& [cls, thr] : iou_thresholds) {
      if (!(thr > 0.0 && thr <= 1.0)) {
        throw ConfigError("eval: IoU threshold for class " + std::to_string(cls) +
                          " must lie in (0, 1]");
      }
    }
    if (ap_points != 11 && ap_points != 40) throw ConfigError("eval: ap_points must be 11 or 40");
  }
};

inline double box_iou(const Box3D& a, const Box3D& b, EvalConfig::IouKind kind) {
  return kind == EvalConfig::IouKind::kBev ? rotated_iou_bev(a, b) : iou_3d(a, b);
}

// Precision/recall curve of one class, in descending-score order.
struct PrCurve {
  std::vector<double> score;
  std::vector<double> precision;
  std::vector<double> recall;
};

// Greedy score-ordered matching: each detection takes the highest-IoU
// unmatched ground truth of its class when that IoU reaches the threshold.
// Returns AP per class; a class with zero ground truth is reported absent.
inline std::map<int, std::optional<double>> compute_ap(std::span<const Box3D> dets,
                                                       std::span<const Box3D> gts,
                                                       const EvalConfig& cfg,
                                                       std::map<int, PrCurve>* curves = nullptr) {
  cfg.validate();
  std::map<int, std::optional<double>> out;
  for (const auto& [cls, threshold] : cfg.iou_thresholds) {
    std::vector<int> gt_idx;
    for (size_t i = 0; i < gts.size(); ++i) {
      if (gts[i].class_id == cls) gt_idx.push_back(static_cast<int>(i));
    }
    if (gt_idx.empty()) {
      out[cls] = std::nullopt;
      continue;
    }
    std::vector<int> det_idx;
    for (size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].class_id == cls) det_idx.push_back(static_cast<int>(i));
    }
    // Stable sort by descending score; ties keep detection order.
    std::stable_sort(det_idx.begin(), det_idx.end(),
                     [&](int a, int b) { return dets[a].score > dets[b].score; });

    std::vector<uint8_t> matched(gt_idx.size(), 0);
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (int d : det_idx) {
      double best_iou = -1.0;
      int best_g = -1;
      for (size_t g = 0; g < gt_idx.size(); ++g) {
        if (matched[g]) continue;
        const double iou = box_iou(dets[d], gts[gt_idx[g]], cfg.iou_kind);
        if (iou > best_iou) {
          best_iou = iou;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g >= 0 && best_iou >= cfg.iou_thresholds.at(cls)) {
        matched[best_g] = 1;
        ++tp;
      } else {
        ++fp;
      }
      precision.push_back(static_cast<double>(tp) / (tp + fp));
      recall.push_back(static_cast<double>(tp) / gt_idx.size());
    }
    if (curves != nullptr) {
      PrCurve& curve = (*curves)[cls];
      for (size_t i = 0; i < det_idx.size(); ++i) {
        curve.score.push_back(dets[det_idx[i]].score);
        curve.precision.push_back(precision[i]);
        curve.recall.push_back(recall[i]);
      }
    }

    // Interpolated AP: precision at recall r is the max precision achieved at
    // any recall >= r. The 11-point grid is {0, 0.1, ..., 1}; the 40-point
    // grid is {1/40, ..., 40/40}.
    double ap = 0.0;
    const int n_points = cfg.ap_points;
    for (int s = 0; s < n_points; ++s) {
      const double r = n_points == 11 ? s / 10.0 : (s + 1) / 40.0;
      double p_max = 0.0;
      for (size_t i = 0; i < recall.size(); ++i) {
        if (recall[i] >= r - 1e-12) p_max = std::max(p_max, precision[i]);
      }
      ap += p_max;
    }
    out[cls] = ap / n_points;
  }
  return out;
}

// Keeps boxes whose camera-frame center lies inside the driving corridor.
inline std::vector<Box3D> corridor_filter(std::span<const Box3D> boxes,
                                          const CalibrationSet& calib) {
  std::vector<Box3D> out;
  for (const Box3D& b : boxes) {
    const Vec3 cam = calib.to_camera(b.center);
    if (cam.x > EvalConfig::kCorridorXMin && cam.x < EvalConfig::kCorridorXMax &&
        cam.z < EvalConfig::kCorridorZMax) {
      out.push_back(b);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature-blurring diagnostics.
// ---------------------------------------------------------------------------

// A 2D image region: an axis-aligned box tested against the unrounded pixel,
// or a binary mask tested at the nearest pixel.
struct MaskRegion {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> mask;  // height x width, nonzero = inside

  bool contains(double u, double v) const {
    const int x = static_cast<int>(std::lround(u));
    const int y = static_cast<int>(std::lround(v));
    if (x < 0 || x >= width || y < 0 || y >= height) return false;
    return mask[static_cast<size_t>(y) * width + x] != 0;
  }
};

using Region2D = std::variant<Box2D, MaskRegion>;

inline bool region_contains(const Region2D& region, double u, double v) {
  if (const auto* box = std::get_if<Box2D>(&region)) return box->contains(u, v);
  return std::get<MaskRegion>(region).contains(u, v);
}

enum class BlurClass { kBackground, kBlurred2d, kForeground3d };

// Point classes: a point whose projection falls inside some 2D region is a 2D
// foreground point; it is a 3D foreground point if it additionally lies
// inside some 3D ground-truth box, otherwise a 3D blurred point. Everything
// else, including points without a valid forward projection, is background.
inline std::vector<BlurClass> classify_blur_points(std::span<const Vec3> points,
                                                   std::span<const Region2D> regions,
                                                   std::span<const Box3D> gt_boxes,
                                                   const CalibrationSet& calib) {
  std::vector<BlurClass> out(points.size(), BlurClass::kBackground);
  for (size_t i = 0; i < points.size(); ++i) {
    const ProjectedPoint proj = project_point(points[i], calib);
    if (!(proj.depth > kMinProjectionDepth)) continue;
    bool in_region = false;
    for (const auto& region : regions) {
      if (region_contains(region, proj.u, proj.v)) {
        in_region = true;
        break;
      }
    }
    if (!in_region) continue;
    bool in_box = false;
    for (const Box3D& box : gt_boxes) {
      if (point_in_box3d(points[i], box)) {
        in_box = true;
        break;
      }
    }
    out[i] = in_box ? BlurClass::kForeground3d : BlurClass::kBlurred2d;
  }
  return out;
}

// Blur ratio and foreground recall over a threshold grid:
//   r_blur(tau) = n_blur(tau) / n_fore2d,  r_fore(tau) = n_fore3d(tau) / n_fore2d,
// where n_fore2d counts all 2D foreground points and the numerators count
// points of that class with score above tau. Undefined when n_fore2d == 0.
struct BlurCurves {
  std::vector<double> tau;
  std::vector<double> r_blur;
  std::vector<double> r_fore;
  bool defined = false;
};

inline BlurCurves blur_curves(std::span<const double> scores, std::span<const BlurClass> classes,
                              double tau_step = 0.01) {
  if (scores.size() != classes.size()) {
    throw DimensionError("blur_curves: score and class counts differ");
  }
  BlurCurves out;
  int n_fore2d = 0;
  for (const BlurClass c : classes) {
    if (c != BlurClass::kBackground) ++n_fore2d;
  }
  if (n_fore2d == 0) return out;
  out.defined = true;
  const int steps = static_cast<int>(std::round(1.0 / tau_step));
  for (int s = 0; s <= steps; ++s) {
    const double tau = s * tau_step;
    int n_blur = 0, n_fore3d = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] <= tau) continue;
      if (classes[i] == BlurClass::kBlurred2d) ++n_blur;
      if (classes[i] == BlurClass::kForeground3d) ++n_fore3d;
    }
    out.tau.push_back(tau);
    out.r_blur.push_back(static_cast<double>(n_blur) / n_fore2d);
    out.r_fore.push_back(static_cast<double>(n_fore3d) / n_fore2d);
  }
  return out;
}

// Per-class instance statistic: for each (2D region, 3D box) instance with at
// least one 2D foreground point, the ratio of 3D foreground points to 2D
// foreground points, averaged over the class's instances.
struct InstanceRatio {
  int instances = 0;  // instances with n_fore2d >= 1
  double mean_ratio = 0.0;
};

inline std::map<int, InstanceRatio> instance_ratio_table(std::span<const Vec3> points,
                                                         std::span<const Region2D> regions,
                                                         std::span<const Box3D> boxes,
                                                         const CalibrationSet& calib) {
  if (regions.size() != boxes.size()) {
    throw DimensionError("instance_ratio_table: need one 2D region per box");
  }
  std::vector<ProjectedPoint> projections(points.size());
  for (size_t i = 0; i < points.size(); ++i) projections[i] = project_point(points[i], calib);

  std::map<int, std::pair<int, double>> acc;  // class -> (instances, ratio sum)
  for (size_t b = 0; b < boxes.size(); ++b) {
    int n_fore2d = 0, n_fore3d = 0;
    for (size_t i = 0; i < points.size(); ++i) {
      const auto& proj = projections[i];
      if (!(proj.depth > kMinProjectionDepth)) continue;
      if (!region_contains(regions[b], proj.u, proj.v)) continue;
      ++n_fore2d;
      if (point_in_box3d(points[i], boxes[b])) ++n_fore3d;
    }
    if (n_fore2d >= 1) {
      auto& slot = acc[boxes[b].class_id];
      slot.first += 1;
      slot.second += static_cast<double>(n_fore3d) / n_fore2d;
    }
  }
  std::map<int, InstanceRatio> out;
  for (const auto& [cls, slot] : acc) out[cls] = {slot.first, slot.second / slot.first};
  return out;
}

}  // namespace rcf
