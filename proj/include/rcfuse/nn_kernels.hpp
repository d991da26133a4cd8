#pragma once

// Framework-free numeric primitives: affine layers (linear + batch-norm
// folded for inference), MLP, softmax, bilinear sampling with analytic
// gradients, focal loss, finite-difference checking, and the named-tensor
// weights container.

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rcfuse/common.hpp"

namespace rcf {

// ---------------------------------------------------------------------------
// Affine layer, y = W x + b. Batch normalization is folded into W and b.
// ---------------------------------------------------------------------------

struct AffineLayer {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> weight;  // out_dim x in_dim, row-major
  std::vector<double> bias;    // out_dim

  static AffineLayer zeros(int in_dim, int out_dim) {
    AffineLayer l;
    l.in_dim = in_dim;
    l.out_dim = out_dim;
    l.weight.assign(static_cast<size_t>(in_dim) * out_dim, 0.0);
    l.bias.assign(out_dim, 0.0);
    return l;
  }

  // Seeded uniform init in [-k, k], k = 1/sqrt(in_dim).
  static AffineLayer seeded(int in_dim, int out_dim, uint64_t seed) {
    AffineLayer l = zeros(in_dim, out_dim);
    SplitMix64 rng(seed);
    const double k = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& w : l.weight) w = rng.uniform(-k, k);
    for (auto& b : l.bias) b = rng.uniform(-k, k);
    return l;
  }

  Feature forward(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != in_dim) {
      throw DimensionError("affine_forward: expected input dim " + std::to_string(in_dim) +
                           ", got " + std::to_string(x.size()));
    }
    Feature y(out_dim);
    for (int o = 0; o < out_dim; ++o) {
      double acc = bias[o];
      const double* row = weight.data() + static_cast<size_t>(o) * in_dim;
      for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
    return y;
  }
};

inline Feature affine_forward(const AffineLayer& layer, std::span<const double> x) {
  return layer.forward(x);
}

// ---------------------------------------------------------------------------
// Feature pyramid: n_I multi-scale maps, each H x W x C row-major.
// ---------------------------------------------------------------------------

struct PyramidLevel {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;  // height x width x channels

  double at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

struct FeaturePyramid {
  std::vector<PyramidLevel> levels;

  int level_count() const { return static_cast<int>(levels.size()); }
};

// ---------------------------------------------------------------------------
// Bilinear sampling, align-corners=false with zero padding: a normalized
// coordinate (nx, ny) in [0,1) maps to source (nx*W - 0.5, ny*H - 0.5); the
// four neighbors are blended and out-of-bounds taps contribute zero.
// ---------------------------------------------------------------------------

inline Feature bilinear_sample(const PyramidLevel& map, double nx, double ny) {
  const double sx = nx * map.width - 0.5;
  const double sy = ny * map.height - 0.5;
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0;
  const double fy = sy - y0;

  Feature out(map.channels, 0.0);
  const double w00 = (1.0 - fy) * (1.0 - fx);
  const double w01 = (1.0 - fy) * fx;
  const double w10 = fy * (1.0 - fx);
  const double w11 = fy * fx;
  const auto tap = [&](int y, int x, double w) {
    if (w == 0.0 || x < 0 || x >= map.width || y < 0 || y >= map.height) return;
    const double* p = map.data.data() + (static_cast<size_t>(y) * map.width + x) * map.channels;
    for (int c = 0; c < map.channels; ++c) out[c] += w * p[c];
  };
  tap(y0, x0, w00);
  tap(y0, x0 + 1, w01);
  tap(y0 + 1, x0, w10);
  tap(y0 + 1, x0 + 1, w11);
  return out;
}

// d(sample)/d(nx, ny): C x 2, row-major. The sampler is piecewise linear in
// the coordinate, so this is exact away from cell boundaries.
inline std::vector<double> bilinear_sample_jacobian(const PyramidLevel& map, double nx,
                                                    double ny) {
  const double sx = nx * map.width - 0.5;
  const double sy = ny * map.height - 0.5;
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0;
  const double fy = sy - y0;

  const auto value = [&](int y, int x, int c) -> double {
    if (x < 0 || x >= map.width || y < 0 || y >= map.height) return 0.0;
    return map.at(y, x, c);
  };

  std::vector<double> jac(static_cast<size_t>(map.channels) * 2, 0.0);
  for (int c = 0; c < map.channels; ++c) {
    const double v00 = value(y0, x0, c);
    const double v01 = value(y0, x0 + 1, c);
    const double v10 = value(y0 + 1, x0, c);
    const double v11 = value(y0 + 1, x0 + 1, c);
    const double d_sx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10);
    const double d_sy = (1.0 - fx) * (v10 - v00) + fx * (v11 - v01);
    jac[static_cast<size_t>(c) * 2 + 0] = d_sx * map.width;
    jac[static_cast<size_t>(c) * 2 + 1] = d_sy * map.height;
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Softmax and MLP.
// ---------------------------------------------------------------------------

inline Feature softmax(std::span<const double> logits) {
  Feature out(logits.size());
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

// Alternating affine and ReLU; the final layer is linear.
struct Mlp {
  std::vector<AffineLayer> layers;

  Feature forward(std::span<const double> x) const {
    Feature h(x.begin(), x.end());
    for (size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(h);
      if (i + 1 < layers.size()) {
        for (auto& v : h) v = relu(v);
      }
    }
    return h;
  }
};

inline Feature mlp_forward(const Mlp& mlp, std::span<const double> x) { return mlp.forward(x); }

// ---------------------------------------------------------------------------
// Focal loss. The score is clamped to [1e-6, 1 - 1e-6] before use.
// ---------------------------------------------------------------------------

inline double focal_loss(double p, int label, double alpha = 0.25, double gamma = 2.0) {
  p = std::min(std::max(p, 1e-6), 1.0 - 1e-6);
  if (label == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

// ---------------------------------------------------------------------------
// Central finite differences, the verification oracle for analytic gradients.
// ---------------------------------------------------------------------------

inline Feature finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> x, double h = 1e-5) {
  Feature grad(x.size());
  Feature probe(x.begin(), x.end());
  for (size_t k = 0; k < x.size(); ++k) {
    const double saved = probe[k];
    probe[k] = saved + h;
    const double fp = f(probe);
    probe[k] = saved - h;
    const double fm = f(probe);
    probe[k] = saved;
    grad[k] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Weights container: a sequence of records until end of file, each
//   u32 name_len | name bytes | u32 rank | u32 dims[rank] | float32 LE payload
// ---------------------------------------------------------------------------

struct NamedTensor {
  std::vector<uint32_t> dims;
  std::vector<double> data;
};

using TensorMap = std::map<std::string, NamedTensor>;

inline void save_tensors(const std::string& path, const TensorMap& tensors) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("weights: cannot open for writing: " + path);
  const auto put = [&](const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f) != n) {
      std::fclose(f);
      throw DataError("weights: short write: " + path);
    }
  };
  for (const auto& [name, tensor] : tensors) {
    const uint32_t name_len = static_cast<uint32_t>(name.size());
    put(&name_len, 4);
    put(name.data(), name.size());
    const uint32_t rank = static_cast<uint32_t>(tensor.dims.size());
    put(&rank, 4);
    put(tensor.dims.data(), 4 * tensor.dims.size());
    std::vector<float> payload(tensor.data.begin(), tensor.data.end());
    put(payload.data(), 4 * payload.size());
  }
  std::fclose(f);
}

inline TensorMap load_tensors(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("weights: cannot open: " + path);
  TensorMap out;
  const auto get = [&](void* p, size_t n) -> bool {
    return std::fread(p, 1, n, f) == n;
  };
  for (;;) {
    uint32_t name_len = 0;
    const size_t got = std::fread(&name_len, 1, 4, f);
    if (got == 0) break;  // clean end of file
    if (got != 4) {
      std::fclose(f);
      throw DataError("weights: truncated record header: " + path);
    }
    std::string name(name_len, '\0');
    uint32_t rank = 0;
    if (!get(name.data(), name_len) || !get(&rank, 4)) {
      std::fclose(f);
      throw DataError("weights: truncated record: " + path);
    }
    NamedTensor t;
    t.dims.resize(rank);
    if (!get(t.dims.data(), 4 * rank)) {
      std::fclose(f);
      throw DataError("weights: truncated dims: " + path);
    }
    size_t count = 1;
    for (uint32_t d : t.dims) count *= d;
    std::vector<float> payload(count);
    if (!get(payload.data(), 4 * count)) {
      std::fclose(f);
      throw DataError("weights: truncated payload for tensor '" + name + "': " + path);
    }
    t.data.assign(payload.begin(), payload.end());
    out.emplace(std::move(name), std::move(t));
  }
  std::fclose(f);
  return out;
}

}  // namespace rcf
