#pragma once

// End-to-end pipelines built from a Config: voxel variant (sparse backbone
// with fusion blocks, semantic head, 3D neck) and pillar variant (dense BEV
// backbone with lift/fuse/collapse fusion blocks). Every stage output runs
// through a NaN/Inf guard that names the stage.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rcfuse/common.hpp"
#include "rcfuse/config.hpp"
#include "rcfuse/dataset_io.hpp"
#include "rcfuse/fusion_blocks.hpp"
#include "rcfuse/neck_bev.hpp"
#include "rcfuse/pillar_path.hpp"
#include "rcfuse/semantic_head.hpp"
#include "rcfuse/sparse_backbone.hpp"

namespace rcf {

struct PyramidShape {
  std::vector<int> level_channels;

  static PyramidShape of(const FeaturePyramid& pyr) {
    PyramidShape s;
    for (const auto& level : pyr.levels) s.level_channels.push_back(level.channels);
    return s;
  }
  int total() const {
    int acc = 0;
    for (int c : level_channels) acc += c;
    return acc;
  }
};

namespace detail {

inline FusionParams make_fusion_params(const Config& cfg, const PyramidShape& pyr, int out_ch,
                                       int stage, const std::string& scope) {
  const uint64_t seed =
      name_seed(cfg.model.init_seed, scope + "." + std::to_string(stage) + ".fusion");
  if (cfg.model.fusion == FusionKind::kSimple) {
    SffParams p;
    p.out_proj = AffineLayer::seeded(pyr.total(), out_ch, seed);
    return p;
  }
  if (pyr.level_channels.empty()) throw ConfigError("fusion: pyramid has no levels");
  for (int c : pyr.level_channels) {
    if (c != pyr.level_channels[0]) {
      throw DimensionError("fusion: deformable sampling needs equal channels on all levels");
    }
  }
  return MsdffParams::seeded(out_ch, pyr.level_channels[0], out_ch,
                             static_cast<int>(pyr.level_channels.size()), cfg.model.n_samples,
                             seed);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Voxel pipeline.
// ---------------------------------------------------------------------------

struct VoxelPipeline {
  Config cfg;
  std::vector<FusionBlock> fusion_stages;     // stages [0, n_fusion)
  std::vector<OrdinaryBlock> ordinary_stages; // stages [n_fusion, blocks)
  AffineLayer query_init;                     // used by the first deformable stage
  bool has_query_init = false;
  Mlp head;
  int head_stage = -1;
};

inline VoxelPipeline build_voxel_pipeline(const Config& cfg, const PyramidShape& pyr) {
  cfg.validate();
  VoxelPipeline p;
  p.cfg = cfg;
  const auto& m = cfg.model;
  int in_ch = static_cast<int>(cfg.dataset.channels.size());
  for (int i = 0; i < m.blocks(); ++i) {
    BlockConfig bc;
    bc.n_residual = m.n_residual;
    bc.in_ch = in_ch;
    bc.out_ch = m.channels[i];
    bc.stride = m.strides[i];
    const std::string name = "backbone." + std::to_string(i);
    OrdinaryBlock block = OrdinaryBlock::seeded(bc, m.init_seed, name);
    if (i < m.n_fusion) {
      FusionBlock fb;
      fb.fusion_cfg = {m.fusion, m.placement, i};
      fb.block = std::move(block);
      fb.params = detail::make_fusion_params(cfg, pyr, bc.out_ch, i, "backbone");
      fb.zero_not_in_view = m.zero_not_in_view;
      p.fusion_stages.push_back(std::move(fb));
    } else {
      p.ordinary_stages.push_back(std::move(block));
    }
    in_ch = bc.out_ch;
  }
  if (m.n_fusion > 0 && m.fusion == FusionKind::kDeformable) {
    const int c0 = m.channels[0];
    const int level1 = pyr.level_channels.empty() ? 0 : pyr.level_channels[0];
    p.query_init = AffineLayer::seeded(c0 + level1 + 3, c0, name_seed(m.init_seed, "query_init"));
    p.has_query_init = true;
  }
  p.head_stage = m.head_stage(m.blocks());
  if (p.head_stage >= 0) {
    p.head = make_head_mlp(m.channels[p.head_stage], m.init_seed, "head");
  }
  return p;
}

struct ForwardResult {
  BevMap bev;
  std::vector<double> head_scores;
  std::vector<uint8_t> head_labels;  // empty when no ground truth given
  CentroidMap head_centroids;
  std::vector<int32_t> head_coords;  // voxel (z, y, x) per scored row
  SegLoss seg_loss;
  double weighted_loss = 0.0;  // alpha_seg * L_seg (detection loss out of scope)
  std::vector<int> stage_active;
};

inline ForwardResult forward_voxel(const VoxelPipeline& p, const PointCloud& cropped,
                                   const FeaturePyramid& pyramid, const CalibrationSet& calib,
                                   std::span<const Box3D> gt_boxes, int threads = 1) {
  const Config& cfg = p.cfg;
  ForwardResult out;

  auto [x, centroids0] = voxelize(cropped, cfg.voxel_spec(), Reduce::kMean);
  check_finite(x.features, "voxelize");

  std::vector<SparseTensor> stage_outputs;
  CentroidMap stage_centroids;
  const int blocks = cfg.model.blocks();
  for (int i = 0; i < blocks; ++i) {
    const std::string stage = "block " + std::to_string(i + 1);
    if (i < cfg.model.n_fusion) {
      const FusionBlock& fb = p.fusion_stages[i];
      const AffineLayer* qinit = (i == 0 && p.has_query_init) ? &p.query_init : nullptr;
      FusionStageResult r = fusion_block_forward(x, cropped, pyramid, calib, fb, qinit, threads);
      x = std::move(r.tensor);
      stage_centroids = std::move(r.centroids);
    } else {
      x = ordinary_block(x, p.ordinary_stages[i - cfg.model.n_fusion], threads);
      if (i == p.head_stage) {
        stage_centroids = compute_centroids(cropped, x.spec, std::span<const int32_t>(x.coords),
                                            x.stride);
      }
    }
    check_finite(x.features, stage);
    out.stage_active.push_back(x.count);

    if (i == p.head_stage) {
      out.head_scores = score_voxels(x, p.head, threads);
      check_finite(out.head_scores, "semantic head");
      out.head_centroids = stage_centroids;
      out.head_coords = x.coords;
      if (!gt_boxes.empty()) {
        out.head_labels = assign_foreground_labels(stage_centroids, gt_boxes);
        if (cfg.model.seg_loss) {
          out.seg_loss = segmentation_loss(out.head_scores, out.head_labels,
                                           cfg.loss.focal_alpha, cfg.loss.focal_gamma);
          out.weighted_loss = cfg.loss.alpha_seg * out.seg_loss.value;
        }
      }
      if (cfg.model.score_weighting) reweight(x, out.head_scores);
    }
    stage_outputs.push_back(x);
  }

  const int first = cfg.model.neck_first_block - 1;
  const int ref_stride = stage_outputs[first].stride;
  std::vector<SparseTensor> to_combine;
  for (int i = first; i < blocks; ++i) {
    to_combine.push_back(rescale_coords(stage_outputs[i], ref_stride));
  }
  out.bev = combine_multiscale(to_combine);
  check_finite(out.bev.data, "neck");
  return out;
}

// ---------------------------------------------------------------------------
// Pillar pipeline.
// ---------------------------------------------------------------------------

struct PillarPipeline {
  Config cfg;
  std::vector<BevBlock> blocks;
  std::vector<FusionParams> fusion_params;        // per fusion stage
  std::vector<HeightEmbeddingTable> height_embs;  // per fusion stage
  AffineLayer query_init;
  bool has_query_init = false;
  Mlp head;
  int head_stage = -1;
};

inline PillarPipeline build_pillar_pipeline(const Config& cfg, const PyramidShape& pyr) {
  cfg.validate();
  if (cfg.model.variant != "pillar") throw ConfigError("pipeline: config variant is not pillar");
  PillarPipeline p;
  p.cfg = cfg;
  const auto& m = cfg.model;
  int in_ch = static_cast<int>(cfg.dataset.channels.size());
  for (int i = 0; i < m.pillar_blocks(); ++i) {
    const std::string name = "bev." + std::to_string(i);
    p.blocks.push_back(
        BevBlock::seeded(in_ch, m.pillar_channels[i], m.pillar_strides[i], m.init_seed, name));
    if (i < m.n_fusion) {
      p.fusion_params.push_back(detail::make_fusion_params(cfg, pyr, m.pillar_channels[i], i, "bev"));
      p.height_embs.push_back(HeightEmbeddingTable::seeded(
          m.z_bins, m.pillar_channels[i],
          name_seed(m.init_seed, "height_emb." + std::to_string(i))));
    }
    in_ch = m.pillar_channels[i];
  }
  if (m.n_fusion > 0 && m.fusion == FusionKind::kDeformable) {
    const int c0 = m.pillar_channels[0];
    const int level1 = pyr.level_channels.empty() ? 0 : pyr.level_channels[0];
    p.query_init = AffineLayer::seeded(c0 + level1 + 3, c0, name_seed(m.init_seed, "query_init"));
    p.has_query_init = true;
  }
  p.head_stage = m.head_stage(m.pillar_blocks());
  if (p.head_stage >= 0) {
    p.head = make_head_mlp(m.pillar_channels[p.head_stage], m.init_seed, "head");
  }
  return p;
}

// Lifting grid: the pillar x/y resolution at the BEV map's stride, z split
// into the configured bin count.
inline VoxelGridSpec make_lift_spec(const VoxelGridSpec& pillar_spec, int stride, int z_bins) {
  VoxelGridSpec spec;
  spec.range = pillar_spec.range;
  spec.cell = {pillar_spec.cell.x * stride, pillar_spec.cell.y * stride,
               (pillar_spec.range.max.z - pillar_spec.range.min.z) / z_bins};
  spec.dims = {z_bins, pillar_spec.dim_at(1, stride), pillar_spec.dim_at(2, stride)};
  return spec;
}

inline ForwardResult forward_pillar(const PillarPipeline& p, const PointCloud& cropped,
                                    const FeaturePyramid& pyramid, const CalibrationSet& calib,
                                    std::span<const Box3D> gt_boxes, int threads = 1) {
  const Config& cfg = p.cfg;
  ForwardResult out;
  const VoxelGridSpec pillar_spec = cfg.pillar_spec();

  auto [pillars, pillar_centroids] = pillarize(cropped, pillar_spec, Reduce::kMean);
  BevMap bev = collapse_to_bev(pillars);
  check_finite(bev.data, "pillarize");

  for (int i = 0; i < cfg.model.pillar_blocks(); ++i) {
    const std::string stage = "bev block " + std::to_string(i + 1);
    bev = bev_block_forward(bev, p.blocks[i], threads);
    if (i < cfg.model.n_fusion) {
      const VoxelGridSpec lift_spec = make_lift_spec(pillar_spec, bev.stride, cfg.model.z_bins);
      auto [lifted, centroids] = lift_bev_to_voxels(bev, cropped, p.height_embs[i], lift_spec);
      std::vector<ProjectedPoint> projections(lifted.count);
      parallel_rows(lifted.count, threads, [&](int64_t k) {
        projections[k] = project_point(centroids.centroid[k], calib);
      });
      FusionBlock fb;
      fb.fusion_cfg = {cfg.model.fusion, cfg.model.placement, i};
      fb.params = p.fusion_params[i];
      fb.zero_not_in_view = cfg.model.zero_not_in_view;
      const AffineLayer* qinit = (i == 0 && p.has_query_init) ? &p.query_init : nullptr;
      detail::sample_and_fuse(lifted, projections, pyramid, fb, qinit, threads);

      if (i == p.head_stage) {
        out.head_scores = score_voxels(lifted, p.head, threads);
        check_finite(out.head_scores, "semantic head");
        out.head_centroids = centroids;
        out.head_coords = lifted.coords;
        if (!gt_boxes.empty()) {
          out.head_labels = assign_foreground_labels(centroids, gt_boxes);
          if (cfg.model.seg_loss) {
            out.seg_loss = segmentation_loss(out.head_scores, out.head_labels,
                                             cfg.loss.focal_alpha, cfg.loss.focal_gamma);
            out.weighted_loss = cfg.loss.alpha_seg * out.seg_loss.value;
          }
        }
        if (cfg.model.score_weighting) reweight(lifted, out.head_scores);
      }

      BevMap fused = collapse_to_bev(lifted);
      fused.spec = bev.spec;
      fused.stride = bev.stride;
      bev = std::move(fused);
    }
    check_finite(bev.data, stage);
    out.stage_active.push_back(bev.height * bev.width);
  }
  out.bev = std::move(bev);
  return out;
}

// ---------------------------------------------------------------------------
// Weight registry: every learnable tensor under a stable name, for
// dump-weights and for loading.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_affine(TensorMap& m, const std::string& name, const AffineLayer& l) {
  m[name + ".weight"] = {{static_cast<uint32_t>(l.out_dim), static_cast<uint32_t>(l.in_dim)},
                         l.weight};
  m[name + ".bias"] = {{static_cast<uint32_t>(l.out_dim)}, l.bias};
}

inline void put_sparse_conv(TensorMap& m, const std::string& name, const SparseConvLayer& l) {
  m[name + ".kernel"] = {{27u, static_cast<uint32_t>(l.in_ch), static_cast<uint32_t>(l.out_ch)},
                         l.kernel};
  m[name + ".bias"] = {{static_cast<uint32_t>(l.out_ch)}, l.bias};
}

inline void put_dense_conv(TensorMap& m, const std::string& name, const DenseConvLayer& l) {
  m[name + ".kernel"] = {{9u, static_cast<uint32_t>(l.in_ch), static_cast<uint32_t>(l.out_ch)},
                         l.kernel};
  m[name + ".bias"] = {{static_cast<uint32_t>(l.out_ch)}, l.bias};
}

inline void put_fusion(TensorMap& m, const std::string& name, const FusionParams& params) {
  if (const auto* sff = std::get_if<SffParams>(&params)) {
    put_affine(m, name + ".out_proj", sff->out_proj);
  } else {
    const auto& d = std::get<MsdffParams>(params);
    put_affine(m, name + ".offset", d.offset_layer);
    put_affine(m, name + ".logit", d.weight_layer);
    put_affine(m, name + ".out_proj", d.out_proj);
  }
}

inline void take(const TensorMap& m, const std::string& name, std::vector<double>& dst) {
  const auto it = m.find(name);
  if (it == m.end()) throw DataError("weights: missing tensor '" + name + "'");
  if (it->second.data.size() != dst.size()) {
    throw DataError("weights: tensor '" + name + "' has " +
                    std::to_string(it->second.data.size()) + " values, expected " +
                    std::to_string(dst.size()));
  }
  dst = it->second.data;
}

inline void take_affine(const TensorMap& m, const std::string& name, AffineLayer& l) {
  take(m, name + ".weight", l.weight);
  take(m, name + ".bias", l.bias);
}

inline void take_fusion(const TensorMap& m, const std::string& name, FusionParams& params) {
  if (auto* sff = std::get_if<SffParams>(&params)) {
    take_affine(m, name + ".out_proj", sff->out_proj);
  } else {
    auto& d = std::get<MsdffParams>(params);
    take_affine(m, name + ".offset", d.offset_layer);
    take_affine(m, name + ".logit", d.weight_layer);
    take_affine(m, name + ".out_proj", d.out_proj);
  }
}

inline void block_tensors(TensorMap& m, const std::string& name, const OrdinaryBlock& block) {
  put_sparse_conv(m, name + ".lead", block.lead);
  for (size_t r = 0; r < block.residuals.size(); ++r) {
    put_sparse_conv(m, name + ".res" + std::to_string(r) + ".conv1", block.residuals[r].conv1);
    put_sparse_conv(m, name + ".res" + std::to_string(r) + ".conv2", block.residuals[r].conv2);
  }
}

inline void take_block(const TensorMap& m, const std::string& name, OrdinaryBlock& block) {
  take(m, name + ".lead.kernel", block.lead.kernel);
  take(m, name + ".lead.bias", block.lead.bias);
  for (size_t r = 0; r < block.residuals.size(); ++r) {
    const std::string res = name + ".res" + std::to_string(r);
    take(m, res + ".conv1.kernel", block.residuals[r].conv1.kernel);
    take(m, res + ".conv1.bias", block.residuals[r].conv1.bias);
    take(m, res + ".conv2.kernel", block.residuals[r].conv2.kernel);
    take(m, res + ".conv2.bias", block.residuals[r].conv2.bias);
  }
}

}  // namespace detail

inline TensorMap collect_tensors(const VoxelPipeline& p) {
  TensorMap m;
  for (size_t i = 0; i < p.fusion_stages.size(); ++i) {
    const std::string name = "backbone." + std::to_string(i);
    detail::block_tensors(m, name, p.fusion_stages[i].block);
    detail::put_fusion(m, name + ".fusion", p.fusion_stages[i].params);
  }
  for (size_t i = 0; i < p.ordinary_stages.size(); ++i) {
    const std::string name = "backbone." + std::to_string(i + p.fusion_stages.size());
    detail::block_tensors(m, name, p.ordinary_stages[i]);
  }
  if (p.has_query_init) detail::put_affine(m, "query_init", p.query_init);
  for (size_t i = 0; i < p.head.layers.size(); ++i) {
    detail::put_affine(m, "head." + std::to_string(i), p.head.layers[i]);
  }
  return m;
}

inline void apply_tensors(VoxelPipeline& p, const TensorMap& m) {
  for (size_t i = 0; i < p.fusion_stages.size(); ++i) {
    const std::string name = "backbone." + std::to_string(i);
    detail::take_block(m, name, p.fusion_stages[i].block);
    detail::take_fusion(m, name + ".fusion", p.fusion_stages[i].params);
  }
  for (size_t i = 0; i < p.ordinary_stages.size(); ++i) {
    detail::take_block(m, "backbone." + std::to_string(i + p.fusion_stages.size()),
                       p.ordinary_stages[i]);
  }
  if (p.has_query_init) detail::take_affine(m, "query_init", p.query_init);
  for (size_t i = 0; i < p.head.layers.size(); ++i) {
    detail::take_affine(m, "head." + std::to_string(i), p.head.layers[i]);
  }
}

inline TensorMap collect_tensors(const PillarPipeline& p) {
  TensorMap m;
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string name = "bev." + std::to_string(i);
    detail::put_dense_conv(m, name + ".conv1", p.blocks[i].conv1);
    detail::put_dense_conv(m, name + ".conv2", p.blocks[i].conv2);
    if (i < p.fusion_params.size()) {
      detail::put_fusion(m, name + ".fusion", p.fusion_params[i]);
      m["height_emb." + std::to_string(i)] = {
          {static_cast<uint32_t>(p.height_embs[i].bins),
           static_cast<uint32_t>(p.height_embs[i].channels)},
          p.height_embs[i].table};
    }
  }
  if (p.has_query_init) detail::put_affine(m, "query_init", p.query_init);
  for (size_t i = 0; i < p.head.layers.size(); ++i) {
    detail::put_affine(m, "head." + std::to_string(i), p.head.layers[i]);
  }
  return m;
}

inline void apply_tensors(PillarPipeline& p, const TensorMap& m) {
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string name = "bev." + std::to_string(i);
    detail::take(m, name + ".conv1.kernel", p.blocks[i].conv1.kernel);
    detail::take(m, name + ".conv1.bias", p.blocks[i].conv1.bias);
    detail::take(m, name + ".conv2.kernel", p.blocks[i].conv2.kernel);
    detail::take(m, name + ".conv2.bias", p.blocks[i].conv2.bias);
    if (i < p.fusion_params.size()) {
      detail::take_fusion(m, name + ".fusion", p.fusion_params[i]);
      detail::take(m, "height_emb." + std::to_string(i), p.height_embs[i].table);
    }
  }
  if (p.has_query_init) detail::take_affine(m, "query_init", p.query_init);
  for (size_t i = 0; i < p.head.layers.size(); ++i) {
    detail::take_affine(m, "head." + std::to_string(i), p.head.layers[i]);
  }
}

}  // namespace rcf
