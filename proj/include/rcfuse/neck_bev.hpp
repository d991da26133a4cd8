#pragma once

// 3D neck for the voxel path: align the last blocks' sparse tensors to a
// reference stride and sum everything that shares an (x, y) column into one
// BEV feature map.

#include <algorithm>
#include <numeric>
#include <vector>

#include "rcfuse/common.hpp"
#include "rcfuse/pillar_path.hpp"
#include "rcfuse/voxel_grid.hpp"

namespace rcf {

// Multiplies coordinates by stride / reference_stride and re-labels the
// tensor at the reference stride; features are untouched.
inline SparseTensor rescale_coords(const SparseTensor& x, int reference_stride) {
  if (reference_stride <= 0 || x.stride < reference_stride ||
      x.stride % reference_stride != 0) {
    throw DimensionError("rescale_coords: stride " + std::to_string(x.stride) +
                         " is not a multiple of reference stride " +
                         std::to_string(reference_stride));
  }
  const int factor = x.stride / reference_stride;
  SparseTensor out = x;
  out.stride = reference_stride;
  for (auto& c : out.coords) c *= factor;
  return out;
}

// Union of the inputs' voxels (duplicates kept as separate rows), then one
// scatter-add over (x, y). Inputs must already share the reference stride and
// channel width. Rows are accumulated in a total order that ignores which
// tensor they came from, so the result is bitwise independent of input order.
inline BevMap combine_multiscale(const std::vector<SparseTensor>& tensors) {
  if (tensors.empty()) throw DimensionError("combine_multiscale: no input tensors");
  const int channels = tensors[0].channels;
  const int stride = tensors[0].stride;
  for (const auto& t : tensors) {
    if (t.channels != channels) throw DimensionError("combine_multiscale: channel mismatch");
    if (t.stride != stride) throw DimensionError("combine_multiscale: inputs must share a stride");
  }

  struct RowRef {
    uint64_t column;  // pack(0, y, x)
    uint64_t full;    // pack(z, y, x)
    const double* row;
  };
  std::vector<RowRef> rows;
  for (const auto& t : tensors) {
    for (int i = 0; i < t.count; ++i) {
      const auto c = t.coord(i);
      rows.push_back({pack_coord(0, c[1], c[2]), t.key(i), t.row(i).data()});
    }
  }
  std::sort(rows.begin(), rows.end(), [channels](const RowRef& a, const RowRef& b) {
    if (a.column != b.column) return a.column < b.column;
    if (a.full != b.full) return a.full < b.full;
    return std::lexicographical_compare(a.row, a.row + channels, b.row, b.row + channels);
  });

  BevMap out = BevMap::zeros(tensors[0].spec, channels, stride);
  for (const RowRef& r : rows) {
    const auto c = unpack_coord(r.column);
    double* dst = out.data.data() + (static_cast<size_t>(c[1]) * out.width + c[2]) * out.channels;
    for (int ch = 0; ch < channels; ++ch) dst[ch] += r.row[ch];
  }
  return out;
}

}  // namespace rcf
