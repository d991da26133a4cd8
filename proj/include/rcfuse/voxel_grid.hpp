#pragma once

// Voxel and pillar grids: binning point clouds into sparse tensors and the
// centroid map that serves as the projection reference for fusion.
//
// Conventions used throughout the backbone:
//   - coordinate order is (z, y, x) everywhere,
//   - sparse tensor rows are sorted ascending by packed (z, y, x) key,
//   - reductions accumulate in that sorted order, so results do not depend on
//     input point order or thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "rcfuse/common.hpp"
#include "rcfuse/dataset_io.hpp"

namespace rcf {

struct VoxelGridSpec {
  RangeSpec range;
  Vec3 cell;                     // meters per cell along (x, y, z)
  std::array<int, 3> dims{};     // cell counts as (D, H, W) = (z, y, x)

  // Derives dims from range extent / cell; the extent must be divisible by
  // the cell within 1e-6 m per axis.
  static VoxelGridSpec create(const RangeSpec& range, Vec3 cell) {
    range.validate();
    VoxelGridSpec spec;
    spec.range = range;
    spec.cell = cell;
    const double extents[3] = {range.max.z - range.min.z, range.max.y - range.min.y,
                               range.max.x - range.min.x};
    const double cells[3] = {cell.z, cell.y, cell.x};
    for (int a = 0; a < 3; ++a) {
      if (!(cells[a] > 0.0)) throw ConfigError("voxel grid: cell size must be positive");
      const double ratio = extents[a] / cells[a];
      const double rounded = std::round(ratio);
      if (rounded < 1.0 || std::abs(extents[a] - rounded * cells[a]) > 1e-6) {
        throw ConfigError("voxel grid: extent not divisible by cell on axis " +
                          std::to_string(a) + " (ratio " + std::to_string(ratio) + ")");
      }
      spec.dims[a] = static_cast<int>(rounded);
    }
    return spec;
  }

  // Pillar grid: one z cell spanning the full z extent.
  static VoxelGridSpec create_pillar(const RangeSpec& range, double cell_x, double cell_y) {
    return create(range, {cell_x, cell_y, range.max.z - range.min.z});
  }

  // Cell count along axis a (0=z, 1=y, 2=x) for a downsampled grid.
  int dim_at(int axis, int stride) const { return (dims[axis] + stride - 1) / stride; }

  // Geometric center of cell (z, y, x) at the given stride.
  Vec3 voxel_center(int32_t z, int32_t y, int32_t x, int stride) const {
    return {range.min.x + (x + 0.5) * cell.x * stride, range.min.y + (y + 0.5) * cell.y * stride,
            range.min.z + (z + 0.5) * cell.z * stride};
  }

  // Voxel index of a point inside the range at the given stride.
  std::array<int32_t, 3> index_of(Vec3 p, int stride) const {
    const auto clamp_axis = [&](double offset, double cell_sz, int axis) {
      int32_t i = static_cast<int32_t>(std::floor(offset / (cell_sz * stride)));
      // Divisibility slack (1e-6 m) can place a boundary point one cell high.
      return std::clamp(i, 0, dim_at(axis, stride) - 1);
    };
    return {clamp_axis(p.z - range.min.z, cell.z, 0), clamp_axis(p.y - range.min.y, cell.y, 1),
            clamp_axis(p.x - range.min.x, cell.x, 2)};
  }
};

// Active voxel coordinates plus per-voxel features. Rows are sorted by
// packed (z, y, x) key and coordinates are unique within a tensor.
struct SparseTensor {
  std::vector<int32_t> coords;   // count x 3, (z, y, x)
  std::vector<double> features;  // count x channels
  int count = 0;
  int channels = 0;
  int stride = 1;  // downsampling factor vs. the base grid
  VoxelGridSpec spec;

  std::span<const double> row(int i) const {
    return {features.data() + static_cast<size_t>(i) * channels, static_cast<size_t>(channels)};
  }
  std::span<double> row(int i) {
    return {features.data() + static_cast<size_t>(i) * channels, static_cast<size_t>(channels)};
  }
  std::array<int32_t, 3> coord(int i) const {
    return {coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]};
  }
  uint64_t key(int i) const { return pack_coord(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]); }
};

// Hash index over a tensor's active set: packed coordinate -> row.
inline std::unordered_map<uint64_t, int32_t> build_coord_index(const SparseTensor& x) {
  std::unordered_map<uint64_t, int32_t> index;
  index.reserve(static_cast<size_t>(x.count) * 2);
  for (int i = 0; i < x.count; ++i) index.emplace(x.key(i), i);
  return index;
}

// Per-active-voxel projection reference: the mean of the member points, or
// the geometric voxel center when the voxel holds no points (dilation).
struct CentroidMap {
  std::vector<Vec3> centroid;
  std::vector<int> point_count;
  std::vector<uint8_t> is_center_fallback;

  int size() const { return static_cast<int>(centroid.size()); }
};

enum class Reduce { kMean, kFirst };

namespace detail {

// Bins every point at the requested stride; throws if a point lies outside
// the grid range (callers crop first).
inline std::vector<std::pair<uint64_t, int>> bin_points(const PointCloud& pc,
                                                        const VoxelGridSpec& spec, int stride) {
  std::vector<std::pair<uint64_t, int>> bins;
  bins.reserve(pc.count);
  for (int i = 0; i < pc.count; ++i) {
    const Vec3 p = pc.xyz(i);
    if (!spec.range.contains(p)) {
      throw std::invalid_argument("voxelize: point " + std::to_string(i) +
                                  " lies outside the grid range; crop the cloud first");
    }
    const auto idx = spec.index_of(p, stride);
    bins.emplace_back(pack_coord(idx[0], idx[1], idx[2]), i);
  }
  // Sorting by (key, original index) fixes the accumulation order.
  std::sort(bins.begin(), bins.end());
  return bins;
}

}  // namespace detail

// Voxelize a cropped cloud: voxel index = floor((p - range.min) / cell), one
// feature row per non-empty voxel reduced over member points.
inline std::pair<SparseTensor, CentroidMap> voxelize(const PointCloud& pc,
                                                     const VoxelGridSpec& spec,
                                                     Reduce reduce = Reduce::kMean) {
  const auto bins = detail::bin_points(pc, spec, 1);

  SparseTensor out;
  out.channels = pc.channels;
  out.stride = 1;
  out.spec = spec;
  CentroidMap centroids;

  size_t i = 0;
  while (i < bins.size()) {
    size_t j = i;
    while (j < bins.size() && bins[j].first == bins[i].first) ++j;
    const auto c = unpack_coord(bins[i].first);
    out.coords.insert(out.coords.end(), c.begin(), c.end());

    Feature feat(pc.channels, 0.0);
    Vec3 mean{};
    const int members = static_cast<int>(j - i);
    if (reduce == Reduce::kFirst) {
      const auto row = pc.row(bins[i].second);
      for (int ch = 0; ch < pc.channels; ++ch) feat[ch] = row[ch];
    }
    for (size_t k = i; k < j; ++k) {
      const auto row = pc.row(bins[k].second);
      if (reduce == Reduce::kMean) {
        for (int ch = 0; ch < pc.channels; ++ch) feat[ch] += row[ch];
      }
      mean = mean + pc.xyz(bins[k].second);
    }
    if (reduce == Reduce::kMean) {
      for (auto& v : feat) v /= members;
    }
    out.features.insert(out.features.end(), feat.begin(), feat.end());
    centroids.centroid.push_back((1.0 / members) * mean);
    centroids.point_count.push_back(members);
    centroids.is_center_fallback.push_back(0);
    ++out.count;
    i = j;
  }
  return {std::move(out), std::move(centroids)};
}

// Pillar variant: same binning with a single z cell, so D = 1.
inline std::pair<SparseTensor, CentroidMap> pillarize(const PointCloud& pc,
                                                      const VoxelGridSpec& pillar_spec,
                                                      Reduce reduce = Reduce::kMean) {
  if (pillar_spec.dims[0] != 1) {
    throw ConfigError("pillarize: spec must have a single z cell spanning the z extent");
  }
  return voxelize(pc, pillar_spec, reduce);
}

// Centroids for an arbitrary active set (typically the output of a strided
// convolution): mean of the member points where any exist, otherwise the
// voxel center with the fallback flag set.
inline CentroidMap compute_centroids(const PointCloud& pc, const VoxelGridSpec& spec,
                                     std::span<const int32_t> active_coords, int stride) {
  const auto bins = detail::bin_points(pc, spec, stride);

  std::unordered_map<uint64_t, std::pair<Vec3, int>> sums;
  sums.reserve(bins.size());
  for (const auto& [key, point] : bins) {
    auto& slot = sums[key];
    slot.first = slot.first + pc.xyz(point);
    slot.second += 1;
  }

  CentroidMap out;
  const int n = static_cast<int>(active_coords.size() / 3);
  out.centroid.resize(n);
  out.point_count.resize(n);
  out.is_center_fallback.resize(n);
  for (int i = 0; i < n; ++i) {
    const int32_t z = active_coords[3 * i], y = active_coords[3 * i + 1],
                  x = active_coords[3 * i + 2];
    const auto it = sums.find(pack_coord(z, y, x));
    if (it != sums.end()) {
      out.centroid[i] = (1.0 / it->second.second) * it->second.first;
      out.point_count[i] = it->second.second;
      out.is_center_fallback[i] = 0;
    } else {
      out.centroid[i] = spec.voxel_center(z, y, x, stride);
      out.point_count[i] = 0;
      out.is_center_fallback[i] = 1;
    }
  }
  return out;
}

}  // namespace rcf
