#pragma once

// Semantic-guided head: binary foreground scoring of non-empty voxels,
// focal-loss supervision, and multiplicative re-weighting of fused features.

#include <span>
#include <vector>

#include "rcfuse/common.hpp"
#include "rcfuse/dataset_io.hpp"
#include "rcfuse/nn_kernels.hpp"
#include "rcfuse/voxel_grid.hpp"

namespace rcf {

// Label 1 iff the centroid lies inside any ground-truth box (closed faces).
inline std::vector<uint8_t> assign_foreground_labels(const CentroidMap& centroids,
                                                     std::span<const Box3D> gt_boxes) {
  std::vector<uint8_t> labels(centroids.size(), 0);
  for (int i = 0; i < centroids.size(); ++i) {
    for (const Box3D& box : gt_boxes) {
      if (point_in_box3d(centroids.centroid[i], box)) {
        labels[i] = 1;
        break;
      }
    }
  }
  return labels;
}

// Default scorer shape: two hidden layers of width `channels`, scalar output.
inline Mlp make_head_mlp(int channels, uint64_t global_seed, const std::string& name) {
  Mlp mlp;
  mlp.layers.push_back(AffineLayer::seeded(channels, channels, name_seed(global_seed, name + ".0")));
  mlp.layers.push_back(AffineLayer::seeded(channels, channels, name_seed(global_seed, name + ".1")));
  mlp.layers.push_back(AffineLayer::seeded(channels, 1, name_seed(global_seed, name + ".2")));
  return mlp;
}

inline std::vector<double> score_voxels(const SparseTensor& x, const Mlp& mlp, int threads = 1) {
  if (mlp.layers.empty() || mlp.layers.back().out_dim != 1) {
    throw DimensionError("score_voxels: head MLP must end in a single output");
  }
  std::vector<double> scores(x.count);
  parallel_rows(x.count, threads, [&](int64_t i) {
    scores[i] = sigmoid(mlp.forward(x.row(static_cast<int>(i)))[0]);
  });
  return scores;
}

inline void reweight(SparseTensor& x, std::span<const double> scores) {
  if (static_cast<int>(scores.size()) != x.count) {
    throw DimensionError("reweight: score count does not match voxel count");
  }
  for (int i = 0; i < x.count; ++i) {
    for (double& v : x.row(i)) v *= scores[i];
  }
}

struct SegLoss {
  double value = 0.0;
  bool empty = false;  // warning flag: no voxels were scored
};

// Mean focal loss over voxels; reduction runs in row order, which is the
// sorted coordinate order of the tensor.
inline SegLoss segmentation_loss(std::span<const double> scores, std::span<const uint8_t> labels,
                                 double alpha = 0.25, double gamma = 2.0) {
  if (scores.size() != labels.size()) {
    throw DimensionError("segmentation_loss: score and label counts differ");
  }
  if (scores.empty()) return {0.0, true};
  double acc = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) acc += focal_loss(scores[i], labels[i], alpha, gamma);
  return {acc / static_cast<double>(scores.size()), false};
}

}  // namespace rcf
