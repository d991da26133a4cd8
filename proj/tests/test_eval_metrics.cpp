#include "rcfuse/eval_metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"

using namespace rcf;

namespace {

Box3D box_at(double x, double y, double z, double l, double w, double h, double yaw, int cls = 0,
             double score = 1.0) {
  Box3D b;
  b.center = {x, y, z};
  b.length = l;
  b.width = w;
  b.height = h;
  b.yaw = yaw;
  b.class_id = cls;
  b.score = score;
  return b;
}

TEST(RotatedIouBev, IdenticalAndDisjoint) {
  const Box3D a = box_at(3, -2, 0, 4, 2, 1.5, 0.7);
  EXPECT_DOUBLE_EQ(rotated_iou_bev(a, a), 1.0);
  const Box3D far = box_at(30, 30, 0, 4, 2, 1.5, -0.3);
  EXPECT_DOUBLE_EQ(rotated_iou_bev(a, far), 0.0);
  Box3D degenerate = a;
  degenerate.length = 0.0;
  EXPECT_DOUBLE_EQ(rotated_iou_bev(a, degenerate), 0.0);
}

TEST(RotatedIouBev, CoincidentUnitSquaresRotated45) {
  const Box3D a = box_at(0, 0, 0, 1, 1, 1, 0.0);
  const Box3D b = box_at(0, 0, 0, 1, 1, 1, M_PI / 4.0);
  // Intersection is the regular octagon with area 8 (sqrt(2) - 1).
  const double inter = 8.0 * (std::sqrt(2.0) - 1.0) * 0.25;
  const double expected = inter / (2.0 - inter);
  EXPECT_NEAR(rotated_iou_bev(a, b), expected, 1e-9);
  EXPECT_NEAR(rotated_iou_bev(a, b), oracle::mc_iou_bev(a, b, 1000000, 99), 2e-3);
}

TEST(RotatedIouBev, SymmetricAndBoundedOnRandomPairs) {
  SplitMix64 rng(100);
  for (int trial = 0; trial < 200; ++trial) {
    const Box3D a = oracle::random_box(rng);
    const Box3D b = oracle::random_box(rng);
    const double ab = rotated_iou_bev(a, b);
    const double ba = rotated_iou_bev(b, a);
    ASSERT_NEAR(ab, ba, 1e-9);
    ASSERT_GE(ab, 0.0);
    ASSERT_LE(ab, 1.0 + 1e-12);
  }
}

TEST(RotatedIouBev, MatchesMonteCarloOracle) {
  SplitMix64 rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const Box3D a = oracle::random_box(rng, 1.0);
    const Box3D b = oracle::random_box(rng, 1.0);
    const double got = rotated_iou_bev(a, b);
    const double want = oracle::mc_iou_bev(a, b, 400000, 1000 + trial);
    ASSERT_NEAR(got, want, 2e-3) << "trial " << trial;
  }
}

TEST(Iou3d, IdenticalDisjointAndStacked) {
  const Box3D a = box_at(5, 1, 0, 3, 2, 1.5, 0.4);
  EXPECT_DOUBLE_EQ(iou_3d(a, a), 1.0);
  Box3D above = a;
  above.center.z += 5.0;  // same BEV footprint, disjoint z
  EXPECT_DOUBLE_EQ(iou_3d(a, above), 0.0);
  Box3D half = a;
  half.center.z += a.height / 2.0;  // half the z extent overlaps
  EXPECT_NEAR(iou_3d(a, half), 0.5 / 1.5, 1e-12);
}

TEST(Iou3d, MatchesMonteCarloOracle) {
  SplitMix64 rng(102);
  for (int trial = 0; trial < 20; ++trial) {
    const Box3D a = oracle::random_box(rng, 1.0);
    const Box3D b = oracle::random_box(rng, 1.0);
    const double got = iou_3d(a, b);
    const double want = oracle::mc_iou_3d(a, b, 400000, 2000 + trial);
    ASSERT_NEAR(got, want, 2e-3) << "trial " << trial;
  }
}

EvalConfig one_class_cfg(double threshold, int points) {
  EvalConfig cfg;
  cfg.iou_thresholds[0] = threshold;
  cfg.ap_points = points;
  cfg.iou_kind = EvalConfig::IouKind::k3d;
  return cfg;
}

TEST(ComputeAp, PerfectDetectorIsOne) {
  SplitMix64 rng(103);
  std::vector<Box3D> gts;
  for (int i = 0; i < 6; ++i) gts.push_back(box_at(5 * i, 0, 0, 3, 2, 1.5, 0.2 * i));
  std::vector<Box3D> dets = gts;
  for (size_t i = 0; i < dets.size(); ++i) dets[i].score = rng.uniform(0.3, 0.9);
  for (int points : {11, 40}) {
    const auto ap = compute_ap(dets, gts, one_class_cfg(0.5, points));
    ASSERT_TRUE(ap.at(0).has_value());
    EXPECT_DOUBLE_EQ(*ap.at(0), 1.0);
  }
}

TEST(ComputeAp, NoDetectionsIsZeroAndNoGtIsAbsent) {
  std::vector<Box3D> gts = {box_at(5, 0, 0, 3, 2, 1.5, 0)};
  const auto ap = compute_ap({}, gts, one_class_cfg(0.5, 11));
  ASSERT_TRUE(ap.at(0).has_value());
  EXPECT_DOUBLE_EQ(*ap.at(0), 0.0);

  EvalConfig cfg = one_class_cfg(0.5, 11);
  cfg.iou_thresholds[1] = 0.25;
  const auto ap2 = compute_ap({}, gts, cfg);
  EXPECT_FALSE(ap2.at(1).has_value());
}

TEST(ComputeAp, HandBuiltSceneMatchesBruteForce) {
  // 3 GT, 4 detections: one duplicate match attempt, one false positive.
  std::vector<Box3D> gts = {box_at(0, 0, 0, 4, 2, 1.5, 0.0),
                            box_at(10, 0, 0, 4, 2, 1.5, 0.3),
                            box_at(20, 0, 0, 4, 2, 1.5, -0.3)};
  std::vector<Box3D> dets = {box_at(0.2, 0.1, 0, 4, 2, 1.5, 0.0, 0, 0.9),
                             box_at(0.3, -0.1, 0, 4, 2, 1.5, 0.0, 0, 0.8),
                             box_at(10.5, 0, 0, 4, 2, 1.5, 0.3, 0, 0.7),
                             box_at(40, 0, 0, 4, 2, 1.5, 0.0, 0, 0.6)};
  for (int points : {11, 40}) {
    const EvalConfig cfg = one_class_cfg(0.25, points);
    const auto got = compute_ap(dets, gts, cfg);
    const auto want = oracle::brute_force_ap(dets, gts, 0, 0.25, points, cfg.iou_kind);
    ASSERT_TRUE(got.at(0).has_value());
    ASSERT_TRUE(want.has_value());
    EXPECT_NEAR(*got.at(0), *want, 1e-9);
  }
}

TEST(ComputeAp, RandomScenesMatchBruteForce) {
  SplitMix64 rng(104);
  for (int scene = 0; scene < 25; ++scene) {
    std::vector<Box3D> gts, dets;
    const int n_gt = 1 + static_cast<int>(rng.below(8));
    for (int i = 0; i < n_gt; ++i) {
      Box3D b = oracle::random_box(rng, 8.0);
      b.class_id = static_cast<int>(rng.below(2));
      gts.push_back(b);
    }
    const int n_det = static_cast<int>(rng.below(12));
    for (int i = 0; i < n_det; ++i) {
      Box3D b;
      if (rng.uniform() < 0.6 && !gts.empty()) {
        b = gts[rng.below(gts.size())];
        b.center.x += rng.uniform(-1.5, 1.5);
        b.center.y += rng.uniform(-1.5, 1.5);
        b.yaw = wrap_angle(b.yaw + rng.uniform(-0.4, 0.4));
      } else {
        b = oracle::random_box(rng, 8.0);
        b.class_id = static_cast<int>(rng.below(2));
      }
      b.score = rng.uniform(0.0, 1.0);
      dets.push_back(b);
    }
    for (int points : {11, 40}) {
      EvalConfig cfg;
      cfg.iou_thresholds[0] = 0.5;
      cfg.iou_thresholds[1] = 0.25;
      cfg.ap_points = points;
      const auto got = compute_ap(dets, gts, cfg);
      for (int cls : {0, 1}) {
        const auto want = oracle::brute_force_ap(dets, gts, cls, cfg.iou_thresholds[cls], points,
                                                 cfg.iou_kind);
        ASSERT_EQ(got.at(cls).has_value(), want.has_value());
        if (want) {
          ASSERT_NEAR(*got.at(cls), *want, 1e-9) << "scene " << scene << " class " << cls;
        }
      }
    }
  }
}

TEST(ComputeAp, MonotoneWhenDetectionImproves) {
  std::vector<Box3D> gts = {box_at(0, 0, 0, 4, 2, 1.5, 0.0), box_at(12, 0, 0, 4, 2, 1.5, 0.0)};
  std::vector<Box3D> dets = {box_at(1.8, 0.9, 0, 4, 2, 1.5, 0.0, 0, 0.9),
                             box_at(12.4, 0, 0, 4, 2, 1.5, 0.0, 0, 0.5)};
  const EvalConfig cfg = one_class_cfg(0.5, 40);
  const double before = *compute_ap(dets, gts, cfg).at(0);
  dets[0].center = {0.2, 0.1, 0};  // strictly better IoU, same score
  const double after = *compute_ap(dets, gts, cfg).at(0);
  EXPECT_GE(after, before);
}

TEST(CorridorFilter, StrictCorridorBounds) {
  // Identity calibration: radar frame == camera frame.
  CalibrationSet calib;
  calib.intrinsic = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  calib.radar_to_camera = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  calib.image_w = calib.image_h = 100;
  std::vector<Box3D> boxes = {box_at(0, 0, 10, 1, 1, 1, 0),    // x=0, z=10: kept
                              box_at(5, 0, 10, 1, 1, 1, 0),    // x=5: dropped
                              box_at(-3.9, 0, 24.9, 1, 1, 1, 0),
                              box_at(0, 0, 25.0, 1, 1, 1, 0),  // z=25 is outside (strict)
                              box_at(4.0, 0, 10, 1, 1, 1, 0)}; // x=4 is outside (strict)
  // The camera-frame predicate directly.
  std::vector<Box3D> want;
  for (const Box3D& b : boxes) {
    if (b.center.x > -4 && b.center.x < 4 && b.center.z < 25) want.push_back(b);
  }
  const auto got = corridor_filter(boxes, calib);
  ASSERT_EQ(got.size(), want.size());
  EXPECT_EQ(got.size(), 2u);
  for (size_t i = 0; i < got.size(); ++i) {
    EXPECT_DOUBLE_EQ(got[i].center.x, want[i].center.x);
  }
}

TEST(CorridorFilter, AppliesCameraTransform) {
  // Synthetic extrinsics: camera z = radar x, camera x = -radar y.
  const CalibrationSet calib = synthetic_calibration(100, 100);
  std::vector<Box3D> boxes = {box_at(10, 0, 0, 1, 1, 1, 0),   // cam (0, 0, 10): kept
                              box_at(30, 0, 0, 1, 1, 1, 0),   // cam z = 30 >= 25: dropped
                              box_at(10, -5, 0, 1, 1, 1, 0)}; // cam x = 5: dropped
  const auto got = corridor_filter(boxes, calib);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_DOUBLE_EQ(got[0].center.x, 10.0);
}

// --------------------------------------------------------------------------
// Blur diagnostics.
// --------------------------------------------------------------------------

struct BlurFixture {
  CalibrationSet calib = synthetic_calibration(200, 160);
  std::vector<Box3D> boxes;
  std::vector<Region2D> regions;

  BlurFixture() {
    boxes = {box_at(10, 0, 0, 2, 2, 2, 0.0)};
    // 2D region: a generous window around the projected box center.
    const ProjectedPoint center = project_point(boxes[0].center, calib);
    regions.emplace_back(Box2D{center.u - 30, center.v - 30, center.u + 30, center.v + 30});
  }
};

TEST(ClassifyBlurPoints, Definitions) {
  BlurFixture f;
  const Vec3 inside_both{10, 0, 0};
  const Vec3 behind_in_region{14, 0, 0};  // projects into the region, outside the 3D box
  const Vec3 off_image{-5, 0, 0};         // behind the camera
  const Vec3 far_side{10, 20, 0};         // projects far from the region
  const std::vector<Vec3> pts = {inside_both, behind_in_region, off_image, far_side};
  const auto classes = classify_blur_points(pts, f.regions, f.boxes, f.calib);
  EXPECT_EQ(classes[0], BlurClass::kForeground3d);
  EXPECT_EQ(classes[1], BlurClass::kBlurred2d);
  EXPECT_EQ(classes[2], BlurClass::kBackground);
  EXPECT_EQ(classes[3], BlurClass::kBackground);
}

TEST(ClassifyBlurPoints, MaskRegionNearestPixel) {
  BlurFixture f;
  MaskRegion mask;
  mask.width = f.calib.image_w;
  mask.height = f.calib.image_h;
  mask.mask.assign(static_cast<size_t>(mask.width) * mask.height, 0);
  const ProjectedPoint center = project_point(f.boxes[0].center, f.calib);
  const int cu = static_cast<int>(std::lround(center.u));
  const int cv = static_cast<int>(std::lround(center.v));
  mask.mask[static_cast<size_t>(cv) * mask.width + cu] = 1;
  const std::vector<Region2D> regions = {mask};
  const std::vector<Vec3> pts = {f.boxes[0].center, {10, 3, 0}};
  const auto classes = classify_blur_points(pts, regions, f.boxes, f.calib);
  EXPECT_EQ(classes[0], BlurClass::kForeground3d);
  EXPECT_EQ(classes[1], BlurClass::kBackground);
}

TEST(ClassifyBlurPoints, MatchesPerPointPredicateOracle) {
  SplitMix64 rng(105);
  BlurFixture f;
  f.boxes.push_back(box_at(14, 2, 0.2, 3, 1.5, 1.5, 0.6));
  const ProjectedPoint c2 = project_point(f.boxes[1].center, f.calib);
  f.regions.emplace_back(Box2D{c2.u - 20, c2.v - 20, c2.u + 20, c2.v + 20});

  std::vector<Vec3> pts;
  for (int i = 0; i < 2000; ++i) {
    pts.push_back({rng.uniform(2, 25), rng.uniform(-8, 8), rng.uniform(-2, 2)});
  }
  const auto classes = classify_blur_points(pts, f.regions, f.boxes, f.calib);
  int fore3d = 0, blurred = 0, background = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    const ProjectedPoint proj = project_point(pts[i], f.calib);
    bool in_region = false;
    if (proj.depth > 1e-9) {
      for (const auto& r : f.regions) {
        if (std::get<Box2D>(r).contains(proj.u, proj.v)) in_region = true;
      }
    }
    bool in_box = false;
    for (const auto& b : f.boxes) in_box |= oracle::point_in_box_halfplane(pts[i], b);
    const BlurClass want = !in_region ? BlurClass::kBackground
                           : in_box   ? BlurClass::kForeground3d
                                      : BlurClass::kBlurred2d;
    ASSERT_EQ(classes[i], want) << "point " << i;
    fore3d += classes[i] == BlurClass::kForeground3d;
    blurred += classes[i] == BlurClass::kBlurred2d;
    background += classes[i] == BlurClass::kBackground;
  }
  EXPECT_GT(fore3d, 0);
  EXPECT_GT(blurred, 0);
  EXPECT_GT(background, 0);
}

TEST(BlurCurves, PartitionAtZeroAndMonotone) {
  SplitMix64 rng(106);
  std::vector<BlurClass> classes;
  std::vector<double> scores;
  for (int i = 0; i < 400; ++i) {
    const double r = rng.uniform();
    classes.push_back(r < 0.3   ? BlurClass::kForeground3d
                      : r < 0.6 ? BlurClass::kBlurred2d
                                : BlurClass::kBackground);
    scores.push_back(rng.uniform(0.001, 0.999));
  }
  const BlurCurves curves = blur_curves(scores, classes);
  ASSERT_TRUE(curves.defined);
  ASSERT_EQ(curves.tau.size(), 101u);
  // tau = 0: every scored point counts, so the two ratios partition.
  EXPECT_NEAR(curves.r_blur[0] + curves.r_fore[0], 1.0, 1e-12);
  for (size_t i = 1; i < curves.tau.size(); ++i) {
    ASSERT_LE(curves.r_blur[i], curves.r_blur[i - 1] + 1e-15);
    ASSERT_LE(curves.r_fore[i], curves.r_fore[i - 1] + 1e-15);
  }

  // Counting oracle at a few grid points.
  const int n_fore2d = static_cast<int>(std::count_if(
      classes.begin(), classes.end(), [](BlurClass c) { return c != BlurClass::kBackground; }));
  for (const int idx : {0, 17, 50, 99}) {
    const double tau = curves.tau[idx];
    int blur = 0, fore = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] > tau && classes[i] == BlurClass::kBlurred2d) ++blur;
      if (scores[i] > tau && classes[i] == BlurClass::kForeground3d) ++fore;
    }
    ASSERT_DOUBLE_EQ(curves.r_blur[idx], static_cast<double>(blur) / n_fore2d);
    ASSERT_DOUBLE_EQ(curves.r_fore[idx], static_cast<double>(fore) / n_fore2d);
  }
}

TEST(BlurCurves, NoBlurredPointsAndUndefinedCase) {
  const std::vector<BlurClass> all_fore(10, BlurClass::kForeground3d);
  const std::vector<double> scores(10, 0.7);
  const BlurCurves curves = blur_curves(scores, all_fore);
  ASSERT_TRUE(curves.defined);
  for (double v : curves.r_blur) ASSERT_DOUBLE_EQ(v, 0.0);

  const std::vector<BlurClass> all_bg(10, BlurClass::kBackground);
  EXPECT_FALSE(blur_curves(scores, all_bg).defined);
}

TEST(InstanceRatioTable, MatchesBruteForce) {
  SplitMix64 rng(107);
  BlurFixture f;
  f.boxes.push_back(box_at(16, -3, 0, 2.5, 1.2, 1.6, -0.4, 1));
  const ProjectedPoint c2 = project_point(f.boxes[1].center, f.calib);
  f.regions.emplace_back(Box2D{c2.u - 15, c2.v - 15, c2.u + 15, c2.v + 15});

  std::vector<Vec3> pts;
  for (int i = 0; i < 800; ++i) {
    pts.push_back({rng.uniform(4, 24), rng.uniform(-8, 8), rng.uniform(-1.5, 1.5)});
  }
  const auto table = instance_ratio_table(pts, f.regions, f.boxes, f.calib);
  for (size_t b = 0; b < f.boxes.size(); ++b) {
    int fore2d = 0, fore3d = 0;
    for (const Vec3& p : pts) {
      const ProjectedPoint proj = project_point(p, f.calib);
      if (!(proj.depth > 1e-9)) continue;
      if (!std::get<Box2D>(f.regions[b]).contains(proj.u, proj.v)) continue;
      ++fore2d;
      if (oracle::point_in_box_halfplane(p, f.boxes[b])) ++fore3d;
    }
    ASSERT_GE(fore2d, 1);
    const int cls = f.boxes[b].class_id;
    ASSERT_TRUE(table.count(cls));
    if (table.at(cls).instances == 1) {
      ASSERT_NEAR(table.at(cls).mean_ratio, static_cast<double>(fore3d) / fore2d, 1e-12);
    }
  }
}

}  // namespace
