#pragma once

// Pillar variant plumbing: dense BEV maps, lifting BEV features into 3D
// voxels with height embeddings, collapsing voxels back to BEV, and the
// dense 3x3 convolution blocks of the BEV backbone.

#include <cmath>
#include <span>
#include <vector>

#include "rcfuse/common.hpp"
#include "rcfuse/nn_kernels.hpp"
#include "rcfuse/voxel_grid.hpp"

namespace rcf {

// Dense top-down feature grid over x/y. data is height x width x channels,
// row y maps to grid y and column x to grid x at the given stride.
struct BevMap {
  int height = 0;   // y cells
  int width = 0;    // x cells
  int channels = 0;
  int stride = 1;
  std::vector<double> data;
  VoxelGridSpec spec;

  static BevMap zeros(const VoxelGridSpec& spec, int channels, int stride = 1) {
    BevMap m;
    m.height = spec.dim_at(1, stride);
    m.width = spec.dim_at(2, stride);
    m.channels = channels;
    m.stride = stride;
    m.spec = spec;
    m.data.assign(static_cast<size_t>(m.height) * m.width * channels, 0.0);
    return m;
  }

  double at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  std::span<const double> cell(int y, int x) const {
    return {data.data() + (static_cast<size_t>(y) * width + x) * channels,
            static_cast<size_t>(channels)};
  }
};

// Learnable per-z-bin embedding added when lifting BEV features to voxels.
struct HeightEmbeddingTable {
  int bins = 0;
  int channels = 0;
  std::vector<double> table;  // bins x channels

  static HeightEmbeddingTable seeded(int bins, int channels, uint64_t seed) {
    HeightEmbeddingTable t;
    t.bins = bins;
    t.channels = channels;
    t.table.resize(static_cast<size_t>(bins) * channels);
    SplitMix64 rng(seed);
    const double k = 1.0 / std::sqrt(static_cast<double>(channels));
    for (auto& v : t.table) v = rng.uniform(-k, k);
    return t;
  }

  std::span<const double> row(int z) const {
    return {table.data() + static_cast<size_t>(z) * channels, static_cast<size_t>(channels)};
  }
};

// Scatter a sparse tensor (any D) down to BEV: features sharing an (x, y)
// column are summed in row order; empty columns stay zero.
inline BevMap collapse_to_bev(const SparseTensor& x) {
  BevMap out = BevMap::zeros(x.spec, x.channels, x.stride);
  for (int i = 0; i < x.count; ++i) {
    const auto c = x.coord(i);
    const auto row = x.row(i);
    double* dst = out.data.data() + (static_cast<size_t>(c[1]) * out.width + c[2]) * out.channels;
    for (int ch = 0; ch < x.channels; ++ch) dst[ch] += row[ch];
  }
  return out;
}

// Lift BEV features into the non-empty voxels of a 3D grid with the same x/y
// resolution: f_vox(x, y, z) = BEV(x, y) + table[z]. Returns the lifted
// tensor and its centroid map.
inline std::pair<SparseTensor, CentroidMap> lift_bev_to_voxels(const BevMap& bev,
                                                               const PointCloud& pc,
                                                               const HeightEmbeddingTable& table,
                                                               const VoxelGridSpec& lift_spec) {
  if (table.channels != bev.channels) {
    throw DimensionError("lift_bev_to_voxels: embedding channels differ from BEV channels");
  }
  if (lift_spec.dims[0] != table.bins) {
    throw DimensionError("lift_bev_to_voxels: z-bin count differs from embedding table");
  }
  auto [tensor, centroids] = voxelize(pc, lift_spec, Reduce::kMean);
  // Replace the point features with lifted BEV features.
  tensor.channels = bev.channels;
  tensor.features.assign(static_cast<size_t>(tensor.count) * bev.channels, 0.0);
  // The lifting grid shares x/y resolution with the BEV map at its stride.
  const double sx = lift_spec.cell.x, sy = lift_spec.cell.y;
  const double bx = bev.spec.cell.x * bev.stride, by = bev.spec.cell.y * bev.stride;
  if (std::abs(sx - bx) > 1e-9 || std::abs(sy - by) > 1e-9) {
    throw DimensionError("lift_bev_to_voxels: lifting grid x/y cells do not match the BEV map");
  }
  for (int i = 0; i < tensor.count; ++i) {
    const auto c = tensor.coord(i);
    if (c[1] >= bev.height || c[2] >= bev.width) {
      throw std::invalid_argument("lift_bev_to_voxels: voxel column outside the BEV map");
    }
    const auto bev_cell = bev.cell(c[1], c[2]);
    const auto emb = table.row(c[0]);
    auto dst = tensor.row(i);
    for (int ch = 0; ch < bev.channels; ++ch) dst[ch] = bev_cell[ch] + emb[ch];
  }
  return {std::move(tensor), std::move(centroids)};
}

// ---------------------------------------------------------------------------
// Dense 3x3 BEV convolution, zero padding, cross-correlation convention
// matching the sparse backbone: y[p] = b + sum_k K[k] . x[s*p + k - 1].
// ---------------------------------------------------------------------------

struct DenseConvLayer {
  int in_ch = 0;
  int out_ch = 0;
  int stride = 1;
  std::vector<double> kernel;  // 9 x in_ch x out_ch
  std::vector<double> bias;

  static DenseConvLayer seeded(int in_ch, int out_ch, int stride, uint64_t seed) {
    DenseConvLayer l;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.stride = stride;
    l.kernel.resize(static_cast<size_t>(9) * in_ch * out_ch);
    l.bias.resize(out_ch);
    SplitMix64 rng(seed);
    const double k = 1.0 / std::sqrt(9.0 * in_ch);
    for (auto& w : l.kernel) w = rng.uniform(-k, k);
    for (auto& b : l.bias) b = rng.uniform(-k, k);
    return l;
  }
};

inline BevMap dense_conv2d(const BevMap& in, const DenseConvLayer& layer, bool relu_after,
                           int threads = 1) {
  if (in.channels != layer.in_ch) {
    throw DimensionError("dense_conv2d: channel mismatch");
  }
  BevMap out;
  out.spec = in.spec;
  out.stride = in.stride * layer.stride;
  out.height = (in.height + layer.stride - 1) / layer.stride;
  out.width = (in.width + layer.stride - 1) / layer.stride;
  out.channels = layer.out_ch;
  out.data.assign(static_cast<size_t>(out.height) * out.width * out.channels, 0.0);

  parallel_rows(static_cast<int64_t>(out.height) * out.width, threads, [&](int64_t flat) {
    const int y = static_cast<int>(flat / out.width);
    const int x = static_cast<int>(flat % out.width);
    double* dst = out.data.data() + flat * out.channels;
    for (int co = 0; co < layer.out_ch; ++co) dst[co] = layer.bias[co];
    for (int ky = 0; ky < 3; ++ky) {
      const int sy = y * layer.stride + ky - 1;
      if (sy < 0 || sy >= in.height) continue;
      for (int kx = 0; kx < 3; ++kx) {
        const int sx = x * layer.stride + kx - 1;
        if (sx < 0 || sx >= in.width) continue;
        const double* src =
            in.data.data() + (static_cast<size_t>(sy) * in.width + sx) * in.channels;
        const double* w =
            layer.kernel.data() + static_cast<size_t>(ky * 3 + kx) * in.channels * layer.out_ch;
        for (int ci = 0; ci < in.channels; ++ci) {
          const double v = src[ci];
          if (v == 0.0) continue;
          const double* wc = w + static_cast<size_t>(ci) * layer.out_ch;
          for (int co = 0; co < layer.out_ch; ++co) dst[co] += v * wc[co];
        }
      }
    }
    if (relu_after) {
      for (int co = 0; co < layer.out_ch; ++co) dst[co] = relu(dst[co]);
    }
  });
  return out;
}

// Two dense 3x3 convolutions per block, each followed by ReLU; the first one
// carries the stride.
struct BevBlock {
  DenseConvLayer conv1;
  DenseConvLayer conv2;

  static BevBlock seeded(int in_ch, int out_ch, int stride, uint64_t global_seed,
                         const std::string& name) {
    return {DenseConvLayer::seeded(in_ch, out_ch, stride, name_seed(global_seed, name + ".conv1")),
            DenseConvLayer::seeded(out_ch, out_ch, 1, name_seed(global_seed, name + ".conv2"))};
  }
};

inline BevMap bev_block_forward(const BevMap& in, const BevBlock& block, int threads = 1) {
  return dense_conv2d(dense_conv2d(in, block.conv1, true, threads), block.conv2, true, threads);
}

}  // namespace rcf
