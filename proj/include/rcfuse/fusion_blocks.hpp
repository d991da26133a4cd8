#pragma once

// Voxel-image fusion: plain multi-scale sampling (SFF), deformable
// multi-scale sampling (MSDFF) with query-conditioned offsets and weights,
// query initialization, and the fusion-block orchestration.
//
// Sampling contract: voxels whose projection is not in view contribute a zero
// sampled feature; the output projection bias still applies unless the
// zero-not-in-view flag is set. Fusion never changes the active set or the
// stride, only the features.

#include <cmath>
#include <span>
#include <variant>
#include <vector>

#include "rcfuse/common.hpp"
#include "rcfuse/geometry.hpp"
#include "rcfuse/nn_kernels.hpp"
#include "rcfuse/sparse_backbone.hpp"
#include "rcfuse/voxel_grid.hpp"

namespace rcf {

enum class FusionKind { kSimple, kDeformable };
enum class Placement { kBeforeResidual, kAfterResidual };

// Simple feature fusion: concatenate one bilinear sample per level, project.
struct SffParams {
  AffineLayer out_proj;  // (sum of level channels) -> C_fuse

  static SffParams seeded(const FeaturePyramid& pyr, int out_ch, uint64_t seed) {
    int in = 0;
    for (const auto& level : pyr.levels) in += level.channels;
    return {AffineLayer::seeded(in, out_ch, seed)};
  }
};

// Deformable sampling parameters; single-head. The offset layer emits raw
// pixel offsets at each level's resolution, reshaped level-major as
// (n_levels, n_samples, 2); the weight layer emits one logit per sample and
// the softmax runs over all n_levels * n_samples logits at once.
struct MsdffParams {
  AffineLayer offset_layer;  // C_q -> 2 * n_levels * n_samples
  AffineLayer weight_layer;  // C_q -> n_levels * n_samples
  AffineLayer out_proj;      // C_level -> C_fuse
  int n_levels = 0;
  int n_samples = 0;

  static MsdffParams seeded(int query_dim, int level_ch, int out_ch, int n_levels, int n_samples,
                            uint64_t seed) {
    MsdffParams p;
    p.n_levels = n_levels;
    p.n_samples = n_samples;
    p.offset_layer = AffineLayer::seeded(query_dim, 2 * n_levels * n_samples, seed);
    p.weight_layer = AffineLayer::seeded(query_dim, n_levels * n_samples, seed ^ 0x9E3779B9ULL);
    p.out_proj = AffineLayer::seeded(level_ch, out_ch, seed ^ 0x85EBCA6BULL);
    return p;
  }
};

using FusionParams = std::variant<SffParams, MsdffParams>;

namespace detail {

inline void check_msdff_pyramid(const FeaturePyramid& pyr, const MsdffParams& p) {
  if (pyr.level_count() != p.n_levels) {
    throw DimensionError("msdff_sample: pyramid has " + std::to_string(pyr.level_count()) +
                         " levels, params expect " + std::to_string(p.n_levels));
  }
  for (const auto& level : pyr.levels) {
    if (level.channels != p.out_proj.in_dim) {
      throw DimensionError("msdff_sample: all pyramid levels must have " +
                           std::to_string(p.out_proj.in_dim) + " channels");
    }
  }
}

}  // namespace detail

// Query initialization for the first fusion block:
// q = Affine(concat(f_vox, f_img_level1, p_norm)).
inline Feature init_query(std::span<const double> f_vox, std::span<const double> f_img_level1,
                          Vec3 p_norm, const AffineLayer& layer) {
  Feature in;
  in.reserve(f_vox.size() + f_img_level1.size() + 3);
  in.insert(in.end(), f_vox.begin(), f_vox.end());
  in.insert(in.end(), f_img_level1.begin(), f_img_level1.end());
  in.push_back(p_norm.x);
  in.push_back(p_norm.y);
  in.push_back(p_norm.z);
  return layer.forward(in);
}

// SFF: f_img = Affine(concat_i Sample(F_i, c_img)).
inline Feature sff_sample(const FeaturePyramid& pyr, const ProjectedPoint& proj,
                          const AffineLayer& out_proj, bool zero_not_in_view = false) {
  Feature concat;
  concat.reserve(out_proj.in_dim);
  if (proj.in_view) {
    for (const auto& level : pyr.levels) {
      const Feature s = bilinear_sample(level, proj.nx, proj.ny);
      concat.insert(concat.end(), s.begin(), s.end());
    }
  } else {
    if (zero_not_in_view) return Feature(out_proj.out_dim, 0.0);
    concat.assign(out_proj.in_dim, 0.0);
  }
  return out_proj.forward(concat);
}

// MSDFF: offsets and weights from the query, samples gathered per level at
// c_img + (o_x / W_i, o_y / H_i), blended by one softmax over all samples.
inline Feature msdff_sample(const FeaturePyramid& pyr, const ProjectedPoint& proj,
                            std::span<const double> query, const MsdffParams& params,
                            bool zero_not_in_view = false) {
  detail::check_msdff_pyramid(pyr, params);
  if (!proj.in_view) {
    if (zero_not_in_view) return Feature(params.out_proj.out_dim, 0.0);
    return params.out_proj.forward(Feature(params.out_proj.in_dim, 0.0));
  }
  const Feature offsets = params.offset_layer.forward(query);
  const Feature weights = softmax(params.weight_layer.forward(query));

  Feature blended(params.out_proj.in_dim, 0.0);
  for (int i = 0; i < params.n_levels; ++i) {
    const PyramidLevel& level = pyr.levels[i];
    for (int j = 0; j < params.n_samples; ++j) {
      const int k = i * params.n_samples + j;
      const double sx = proj.nx + offsets[2 * k] / level.width;
      const double sy = proj.ny + offsets[2 * k + 1] / level.height;
      const Feature s = bilinear_sample(level, sx, sy);
      for (int c = 0; c < params.out_proj.in_dim; ++c) blended[c] += weights[k] * s[c];
    }
  }
  return params.out_proj.forward(blended);
}

// MSDFF with analytic Jacobians of the output w.r.t. the query (C_out x C_q)
// and w.r.t. the reference coordinate (C_out x 2). Exact away from sampler
// cell boundaries, where the sampler is piecewise linear.
struct MsdffJacobians {
  Feature value;
  std::vector<double> d_query;  // C_out x C_q, row-major
  std::vector<double> d_coord;  // C_out x 2, row-major
};

inline MsdffJacobians msdff_sample_jacobians(const FeaturePyramid& pyr,
                                             const ProjectedPoint& proj,
                                             std::span<const double> query,
                                             const MsdffParams& params) {
  detail::check_msdff_pyramid(pyr, params);
  const int cq = params.offset_layer.in_dim;
  const int cs = params.out_proj.in_dim;   // level channels
  const int co = params.out_proj.out_dim;
  const int n_total = params.n_levels * params.n_samples;

  MsdffJacobians out;
  out.d_query.assign(static_cast<size_t>(co) * cq, 0.0);
  out.d_coord.assign(static_cast<size_t>(co) * 2, 0.0);
  if (!proj.in_view) {
    out.value = params.out_proj.forward(Feature(cs, 0.0));
    return out;
  }

  const Feature offsets = params.offset_layer.forward(query);
  const Feature logits = params.weight_layer.forward(query);
  const Feature weights = softmax(logits);

  std::vector<Feature> samples(n_total);
  std::vector<std::vector<double>> sample_jac(n_total);  // C x 2 each
  Feature blended(cs, 0.0);
  for (int i = 0; i < params.n_levels; ++i) {
    const PyramidLevel& level = pyr.levels[i];
    for (int j = 0; j < params.n_samples; ++j) {
      const int k = i * params.n_samples + j;
      const double sx = proj.nx + offsets[2 * k] / level.width;
      const double sy = proj.ny + offsets[2 * k + 1] / level.height;
      samples[k] = bilinear_sample(level, sx, sy);
      sample_jac[k] = bilinear_sample_jacobian(level, sx, sy);
      for (int c = 0; c < cs; ++c) blended[c] += weights[k] * samples[k][c];
    }
  }
  out.value = params.out_proj.forward(blended);

  // d(blended)/d(q) in sample space, then projected through out_proj.
  // Weight path: dw_k/dq = w_k (A_k - sum_m w_m A_m) with A rows of the
  // weight layer. Offset path: w_k J_k diag(1/W_i, 1/H_i) O_rows.
  std::vector<double> weighted_logit_rows(cq, 0.0);
  for (int m = 0; m < n_total; ++m) {
    const double* row = params.weight_layer.weight.data() + static_cast<size_t>(m) * cq;
    for (int a = 0; a < cq; ++a) weighted_logit_rows[a] += weights[m] * row[a];
  }
  std::vector<double> d_blend_q(static_cast<size_t>(cs) * cq, 0.0);
  std::vector<double> d_blend_c(static_cast<size_t>(cs) * 2, 0.0);
  for (int i = 0; i < params.n_levels; ++i) {
    const PyramidLevel& level = pyr.levels[i];
    for (int j = 0; j < params.n_samples; ++j) {
      const int k = i * params.n_samples + j;
      const double* wrow = params.weight_layer.weight.data() + static_cast<size_t>(k) * cq;
      const double* ox_row = params.offset_layer.weight.data() + static_cast<size_t>(2 * k) * cq;
      const double* oy_row =
          params.offset_layer.weight.data() + static_cast<size_t>(2 * k + 1) * cq;
      for (int c = 0; c < cs; ++c) {
        const double jx = sample_jac[k][static_cast<size_t>(c) * 2 + 0];
        const double jy = sample_jac[k][static_cast<size_t>(c) * 2 + 1];
        double* dst = d_blend_q.data() + static_cast<size_t>(c) * cq;
        for (int a = 0; a < cq; ++a) {
          const double dwk = weights[k] * (wrow[a] - weighted_logit_rows[a]);
          const double dpos = weights[k] * (jx * ox_row[a] / level.width +
                                            jy * oy_row[a] / level.height);
          dst[a] += dwk * samples[k][c] + dpos;
        }
        d_blend_c[static_cast<size_t>(c) * 2 + 0] += weights[k] * jx;
        d_blend_c[static_cast<size_t>(c) * 2 + 1] += weights[k] * jy;
      }
    }
  }
  for (int o = 0; o < co; ++o) {
    const double* prow = params.out_proj.weight.data() + static_cast<size_t>(o) * cs;
    for (int a = 0; a < cq; ++a) {
      double acc = 0.0;
      for (int c = 0; c < cs; ++c) acc += prow[c] * d_blend_q[static_cast<size_t>(c) * cq + a];
      out.d_query[static_cast<size_t>(o) * cq + a] = acc;
    }
    for (int a = 0; a < 2; ++a) {
      double acc = 0.0;
      for (int c = 0; c < cs; ++c) acc += prow[c] * d_blend_c[static_cast<size_t>(c) * 2 + a];
      out.d_coord[static_cast<size_t>(o) * 2 + a] = acc;
    }
  }
  return out;
}

// Fusion operator: elementwise addition (C_img = C_vox = C_fuse).
inline Feature fuse_features(std::span<const double> f_img, std::span<const double> f_vox) {
  if (f_img.size() != f_vox.size()) {
    throw DimensionError("fuse_features: image and voxel feature dims differ");
  }
  Feature out(f_img.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f_img[i] + f_vox[i];
  return out;
}

// ---------------------------------------------------------------------------
// Fusion block: an ordinary block with a sampling step inserted before (BR)
// or after (AR) the residual stack.
// ---------------------------------------------------------------------------

struct FusionBlockConfig {
  FusionKind kind = FusionKind::kDeformable;
  Placement placement = Placement::kBeforeResidual;
  int stage_index = 0;
};

struct FusionBlock {
  FusionBlockConfig fusion_cfg;
  OrdinaryBlock block;
  FusionParams params;
  bool zero_not_in_view = false;
};

struct FusionStageResult {
  SparseTensor tensor;
  CentroidMap centroids;
  std::vector<ProjectedPoint> projections;
};

namespace detail {

// Samples and fuses image features into every row of `x` in place.
// `query_init` is non-null only for the first fusion block of the network;
// later blocks use the voxel feature itself as the query.
inline void sample_and_fuse(SparseTensor& x, const std::vector<ProjectedPoint>& projections,
                            const FeaturePyramid& pyramid, const FusionBlock& fb,
                            const AffineLayer* query_init, int threads) {
  const RangeSpec& range = x.spec.range;
  const Vec3 extent = range.max - range.min;
  parallel_rows(x.count, threads, [&](int64_t i) {
    const auto row = x.row(static_cast<int>(i));
    const ProjectedPoint& proj = projections[i];
    Feature f_img;
    if (const auto* sff = std::get_if<SffParams>(&fb.params)) {
      f_img = sff_sample(pyramid, proj, sff->out_proj, fb.zero_not_in_view);
    } else {
      const auto& msdff = std::get<MsdffParams>(fb.params);
      Feature query;
      if (query_init != nullptr) {
        Feature f_img1 = proj.in_view ? bilinear_sample(pyramid.levels[0], proj.nx, proj.ny)
                                      : Feature(pyramid.levels[0].channels, 0.0);
        const auto c = x.coord(static_cast<int>(i));
        const Vec3 center = x.spec.voxel_center(c[0], c[1], c[2], x.stride);
        const Vec3 p_norm{(center.x - range.min.x) / extent.x,
                          (center.y - range.min.y) / extent.y,
                          (center.z - range.min.z) / extent.z};
        query = init_query(row, f_img1, p_norm, *query_init);
      } else {
        query.assign(row.begin(), row.end());
      }
      f_img = msdff_sample(pyramid, proj, query, msdff, fb.zero_not_in_view);
    }
    const Feature fused = fuse_features(f_img, row);
    std::copy(fused.begin(), fused.end(), x.row(static_cast<int>(i)).begin());
  });
}

}  // namespace detail

// Forward pass of one fusion block. Centroids are computed on the active set
// produced by the lead convolution (with center fallback for point-free
// voxels) and projected once; the active set and stride are those of the
// equivalent ordinary block.
inline FusionStageResult fusion_block_forward(const SparseTensor& x, const PointCloud& points,
                                              const FeaturePyramid& pyramid,
                                              const CalibrationSet& calib, const FusionBlock& fb,
                                              const AffineLayer* query_init, int threads = 1) {
  FusionStageResult out;
  out.tensor = lead_conv(x, fb.block, threads);
  out.centroids = compute_centroids(points, out.tensor.spec,
                                    std::span<const int32_t>(out.tensor.coords),
                                    out.tensor.stride);
  out.projections.resize(out.tensor.count);
  parallel_rows(out.tensor.count, threads, [&](int64_t i) {
    out.projections[i] = project_point(out.centroids.centroid[i], calib);
  });

  if (fb.fusion_cfg.placement == Placement::kBeforeResidual) {
    detail::sample_and_fuse(out.tensor, out.projections, pyramid, fb, query_init,
                            threads);
    for (const auto& res : fb.block.residuals) out.tensor = residual_block(out.tensor, res, threads);
  } else {
    for (const auto& res : fb.block.residuals) out.tensor = residual_block(out.tensor, res, threads);
    detail::sample_and_fuse(out.tensor, out.projections, pyramid, fb, query_init,
                            threads);
  }
  return out;
}

}  // namespace rcf
