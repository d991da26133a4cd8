#pragma once

// Hash-indexed sparse 3D convolutions (3x3x3, padding 1) and the block
// structure composed from them.
//
// Submanifold convolution keeps the active set; strided convolution (stride
// 2) produces the active set { floor((c + o) / 2) | c active, o in kernel },
// which dilates the sparsity pattern: outputs may cover no source points.
// Feature values follow the dense cross-correlation convention
//   y[p] = b + sum_k K[k] . x[s*p + k - 1],
// so scatter -> dense conv -> re-sparsify reproduces the sparse result.

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <vector>

#include "rcfuse/common.hpp"
#include "rcfuse/voxel_grid.hpp"

namespace rcf {

struct SparseConvLayer {
  enum class Kind { kSubmanifold, kStrided };

  Kind kind = Kind::kSubmanifold;
  int in_ch = 0;
  int out_ch = 0;
  int stride = 1;               // 1 for submanifold, 2 for strided
  std::vector<double> kernel;   // 27 x in_ch x out_ch
  std::vector<double> bias;     // out_ch

  static SparseConvLayer zeros(Kind kind, int in_ch, int out_ch) {
    SparseConvLayer l;
    l.kind = kind;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.stride = kind == Kind::kStrided ? 2 : 1;
    l.kernel.assign(static_cast<size_t>(27) * in_ch * out_ch, 0.0);
    l.bias.assign(out_ch, 0.0);
    return l;
  }

  static SparseConvLayer seeded(Kind kind, int in_ch, int out_ch, uint64_t seed) {
    SparseConvLayer l = zeros(kind, in_ch, out_ch);
    SplitMix64 rng(seed);
    const double k = 1.0 / std::sqrt(27.0 * in_ch);
    for (auto& w : l.kernel) w = rng.uniform(-k, k);
    for (auto& b : l.bias) b = rng.uniform(-k, k);
    return l;
  }

  double weight(int kz, int ky, int kx, int ci, int co) const {
    return kernel[(static_cast<size_t>((kz * 3 + ky) * 3 + kx) * in_ch + ci) * out_ch + co];
  }
};

namespace detail {

inline int32_t floor_div2(int32_t a) { return a >= 0 ? a / 2 : -((-a + 1) / 2); }

inline void check_channels(const SparseTensor& x, const SparseConvLayer& layer,
                           const char* what) {
  if (x.channels != layer.in_ch) {
    throw DimensionError(std::string(what) + ": tensor has " + std::to_string(x.channels) +
                         " channels, layer expects " + std::to_string(layer.in_ch));
  }
}

}  // namespace detail

// Submanifold convolution: the output active set equals the input active set
// and each output gathers only over active neighbors.
inline SparseTensor submanifold_conv(const SparseTensor& x, const SparseConvLayer& layer,
                                     int threads = 1) {
  if (layer.kind != SparseConvLayer::Kind::kSubmanifold) {
    throw DimensionError("submanifold_conv: layer is not a submanifold layer");
  }
  detail::check_channels(x, layer, "submanifold_conv");

  SparseTensor y;
  y.coords = x.coords;
  y.count = x.count;
  y.channels = layer.out_ch;
  y.stride = x.stride;
  y.spec = x.spec;
  y.features.assign(static_cast<size_t>(y.count) * y.channels, 0.0);

  const auto index = build_coord_index(x);
  parallel_rows(y.count, threads, [&](int64_t i) {
    const auto c = x.coord(static_cast<int>(i));
    double* out = y.features.data() + i * y.channels;
    for (int co = 0; co < layer.out_ch; ++co) out[co] = layer.bias[co];
    for (int kz = 0; kz < 3; ++kz) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int32_t nz = c[0] + kz - 1, ny = c[1] + ky - 1, nx = c[2] + kx - 1;
          if (nz < 0 || ny < 0 || nx < 0) continue;
          const auto it = index.find(pack_coord(nz, ny, nx));
          if (it == index.end()) continue;
          const double* in = x.features.data() + static_cast<size_t>(it->second) * x.channels;
          const double* w =
              layer.kernel.data() + static_cast<size_t>((kz * 3 + ky) * 3 + kx) * x.channels *
                                        layer.out_ch;
          for (int ci = 0; ci < x.channels; ++ci) {
            const double v = in[ci];
            if (v == 0.0) continue;
            const double* wc = w + static_cast<size_t>(ci) * layer.out_ch;
            for (int co = 0; co < layer.out_ch; ++co) out[co] += v * wc[co];
          }
        }
      }
    }
  });
  return y;
}

// Strided (stride 2) convolution with the dilating active-set rule above.
inline SparseTensor strided_sparse_conv(const SparseTensor& x, const SparseConvLayer& layer,
                                        int threads = 1) {
  if (layer.kind != SparseConvLayer::Kind::kStrided || layer.stride != 2) {
    throw DimensionError("strided_sparse_conv: layer must be strided with stride 2");
  }
  detail::check_channels(x, layer, "strided_sparse_conv");

  SparseTensor y;
  y.channels = layer.out_ch;
  y.stride = x.stride * 2;
  y.spec = x.spec;

  const int bound_z = x.spec.dim_at(0, y.stride);
  const int bound_y = x.spec.dim_at(1, y.stride);
  const int bound_x = x.spec.dim_at(2, y.stride);

  std::unordered_set<uint64_t> active;
  active.reserve(static_cast<size_t>(x.count) * 8);
  for (int i = 0; i < x.count; ++i) {
    const auto c = x.coord(i);
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int32_t pz = detail::floor_div2(c[0] + dz);
          const int32_t py = detail::floor_div2(c[1] + dy);
          const int32_t px = detail::floor_div2(c[2] + dx);
          if (pz < 0 || py < 0 || px < 0 || pz >= bound_z || py >= bound_y || px >= bound_x) {
            continue;
          }
          active.insert(pack_coord(pz, py, px));
        }
      }
    }
  }
  std::vector<uint64_t> keys(active.begin(), active.end());
  std::sort(keys.begin(), keys.end());

  y.count = static_cast<int>(keys.size());
  y.coords.resize(static_cast<size_t>(y.count) * 3);
  for (int i = 0; i < y.count; ++i) {
    const auto c = unpack_coord(keys[i]);
    std::copy(c.begin(), c.end(), y.coords.begin() + 3 * i);
  }
  y.features.assign(static_cast<size_t>(y.count) * y.channels, 0.0);

  const auto index = build_coord_index(x);
  parallel_rows(y.count, threads, [&](int64_t i) {
    const auto p = y.coord(static_cast<int>(i));
    double* out = y.features.data() + i * y.channels;
    for (int co = 0; co < layer.out_ch; ++co) out[co] = layer.bias[co];
    for (int kz = 0; kz < 3; ++kz) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int32_t nz = 2 * p[0] + kz - 1, ny = 2 * p[1] + ky - 1, nx = 2 * p[2] + kx - 1;
          if (nz < 0 || ny < 0 || nx < 0) continue;
          const auto it = index.find(pack_coord(nz, ny, nx));
          if (it == index.end()) continue;
          const double* in = x.features.data() + static_cast<size_t>(it->second) * x.channels;
          const double* w =
              layer.kernel.data() + static_cast<size_t>((kz * 3 + ky) * 3 + kx) * x.channels *
                                        layer.out_ch;
          for (int ci = 0; ci < x.channels; ++ci) {
            const double v = in[ci];
            if (v == 0.0) continue;
            const double* wc = w + static_cast<size_t>(ci) * layer.out_ch;
            for (int co = 0; co < layer.out_ch; ++co) out[co] += v * wc[co];
          }
        }
      }
    }
  });
  return y;
}

// y = ReLU(x + conv2(ReLU(conv1(x)))); both convolutions are submanifold, so
// the active set is preserved.
struct ResidualBlock {
  SparseConvLayer conv1;
  SparseConvLayer conv2;

  static ResidualBlock seeded(int channels, uint64_t seed1, uint64_t seed2) {
    return {SparseConvLayer::seeded(SparseConvLayer::Kind::kSubmanifold, channels, channels, seed1),
            SparseConvLayer::seeded(SparseConvLayer::Kind::kSubmanifold, channels, channels,
                                    seed2)};
  }
};

inline SparseTensor residual_block(const SparseTensor& x, const ResidualBlock& block,
                                   int threads = 1) {
  if (block.conv1.in_ch != block.conv2.out_ch || block.conv1.in_ch != x.channels) {
    throw DimensionError("residual_block: channel counts must match the input");
  }
  SparseTensor h = submanifold_conv(x, block.conv1, threads);
  for (auto& v : h.features) v = relu(v);
  SparseTensor y = submanifold_conv(h, block.conv2, threads);
  for (size_t i = 0; i < y.features.size(); ++i) y.features[i] = relu(y.features[i] + x.features[i]);
  return y;
}

struct BlockConfig {
  int n_residual = 2;
  int in_ch = 0;
  int out_ch = 0;
  int stride = 1;  // 1 or 2
};

// One backbone stage: a lead convolution (strided when cfg.stride == 2,
// channel-changing submanifold otherwise) followed by the residual stack.
struct OrdinaryBlock {
  BlockConfig cfg;
  SparseConvLayer lead;
  std::vector<ResidualBlock> residuals;

  static OrdinaryBlock seeded(const BlockConfig& cfg, uint64_t global_seed,
                              const std::string& name) {
    if (cfg.in_ch <= 0 || cfg.out_ch <= 0) throw ConfigError("block: channels must be positive");
    OrdinaryBlock block;
    block.cfg = cfg;
    const auto kind = cfg.stride == 2 ? SparseConvLayer::Kind::kStrided
                                      : SparseConvLayer::Kind::kSubmanifold;
    block.lead = SparseConvLayer::seeded(kind, cfg.in_ch, cfg.out_ch,
                                         name_seed(global_seed, name + ".lead"));
    for (int r = 0; r < cfg.n_residual; ++r) {
      block.residuals.push_back(ResidualBlock::seeded(
          cfg.out_ch, name_seed(global_seed, name + ".res" + std::to_string(r) + ".conv1"),
          name_seed(global_seed, name + ".res" + std::to_string(r) + ".conv2")));
    }
    return block;
  }
};

inline SparseTensor lead_conv(const SparseTensor& x, const OrdinaryBlock& block,
                              int threads = 1) {
  return block.cfg.stride == 2 ? strided_sparse_conv(x, block.lead, threads)
                               : submanifold_conv(x, block.lead, threads);
}

inline SparseTensor ordinary_block(const SparseTensor& x, const OrdinaryBlock& block,
                                   int threads = 1) {
  SparseTensor y = lead_conv(x, block, threads);
  for (const auto& res : block.residuals) y = residual_block(y, res, threads);
  return y;
}

}  // namespace rcf
