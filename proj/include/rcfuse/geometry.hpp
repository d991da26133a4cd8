#pragma once

// Homogeneous projection of radar-frame points into image pixel and
// normalized coordinates.

#include <array>
#include <cmath>
#include <limits>

#include "rcfuse/common.hpp"

namespace rcf {

// Camera intrinsics (3x4, pixels), radar-to-camera rigid transform (4x4,
// meters) and the image size. Matrices are stored row-major.
struct CalibrationSet {
  std::array<double, 12> intrinsic{};        // rows of T_intr
  std::array<double, 16> radar_to_camera{};  // rows of T_r2c
  int image_w = 0;
  int image_h = 0;

  // bottom row of the rigid transform must be (0,0,0,1); intrinsic row 3 must
  // be (0,0,1,0); image size must be positive.
  void validate() const {
    const auto& t = radar_to_camera;
    const bool rigid_ok = t[12] == 0.0 && t[13] == 0.0 && t[14] == 0.0 && t[15] == 1.0;
    const auto& k = intrinsic;
    const bool intr_ok = k[8] == 0.0 && k[9] == 0.0 && k[10] == 1.0 && k[11] == 0.0;
    if (!rigid_ok) throw DataError("calibration: radar_to_camera bottom row is not (0,0,0,1)");
    if (!intr_ok) throw DataError("calibration: intrinsic row 3 is not (0,0,1,0)");
    if (image_w <= 0 || image_h <= 0) throw DataError("calibration: image size must be positive");
  }

  // Camera-frame coordinates of a radar-frame point.
  Vec3 to_camera(Vec3 p) const {
    const auto& t = radar_to_camera;
    return {t[0] * p.x + t[1] * p.y + t[2] * p.z + t[3],
            t[4] * p.x + t[5] * p.y + t[6] * p.z + t[7],
            t[8] * p.x + t[9] * p.y + t[10] * p.z + t[11]};
  }
};

// Projection result. `in_view` holds exactly when depth > 0 and the pixel
// lies inside [0,W) x [0,H); normalized coordinates of in-view points lie in
// [0,1) x [0,1). Pixel convention: (0,0) is the center of the top-left pixel.
struct ProjectedPoint {
  double u = 0.0;
  double v = 0.0;
  double nx = 0.0;  // u / W
  double ny = 0.0;  // v / H
  double depth = 0.0;
  bool in_view = false;
};

inline constexpr double kMinProjectionDepth = 1e-9;

inline ProjectedPoint project_point(Vec3 p, const CalibrationSet& calib) {
  const Vec3 cam = calib.to_camera(p);
  const auto& k = calib.intrinsic;
  const double hx = k[0] * cam.x + k[1] * cam.y + k[2] * cam.z + k[3];
  const double hy = k[4] * cam.x + k[5] * cam.y + k[6] * cam.z + k[7];
  const double hz = k[8] * cam.x + k[9] * cam.y + k[10] * cam.z + k[11];

  ProjectedPoint out;
  out.depth = hz;
  if (std::abs(hz) < kMinProjectionDepth) {
    // No division: mark invalid with a NaN pixel sentinel.
    out.u = out.v = out.nx = out.ny = std::numeric_limits<double>::quiet_NaN();
    out.in_view = false;
    return out;
  }
  out.u = hx / hz;
  out.v = hy / hz;
  out.nx = out.u / calib.image_w;
  out.ny = out.v / calib.image_h;
  out.in_view = hz > 0.0 && out.u >= 0.0 && out.u < calib.image_w && out.v >= 0.0 &&
                out.v < calib.image_h;
  return out;
}

}  // namespace rcf
