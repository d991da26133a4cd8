#include "rcfuse/neck_bev.hpp"

#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"

using namespace rcf;

namespace {

TEST(RescaleCoords, StrideTwoDoublesCoordinates) {
  const VoxelGridSpec spec = oracle::cube_spec(16);
  SparseTensor t;
  t.spec = spec;
  t.channels = 2;
  t.stride = 16;
  t.count = 1;
  t.coords = {3, 4, 5};  // factor 2: every coordinate doubles
  t.features = {1.0, 2.0};
  const SparseTensor out = rescale_coords(t, 8);
  EXPECT_EQ(out.coord(0)[0], 6);
  EXPECT_EQ(out.coord(0)[1], 8);
  EXPECT_EQ(out.coord(0)[2], 10);
  EXPECT_EQ(out.stride, 8);
  EXPECT_EQ(out.features, t.features);
}

TEST(RescaleCoords, IdentityAtSameStrideAndRoundTrip) {
  const VoxelGridSpec spec = oracle::cube_spec(16);
  SplitMix64 rng(80);
  SparseTensor t = oracle::random_sparse_tensor(rng, oracle::cube_spec(4), 3, 0.5);
  t.spec = spec;
  t.stride = 4;
  const SparseTensor same = rescale_coords(t, 4);
  EXPECT_EQ(same.coords, t.coords);

  const SparseTensor fine = rescale_coords(t, 2);
  for (int i = 0; i < t.count; ++i) {
    for (int a = 0; a < 3; ++a) {
      // integer-division round trip
      ASSERT_EQ(fine.coord(i)[a] / 2, t.coord(i)[a]);
    }
  }
  EXPECT_THROW(rescale_coords(t, 3), DimensionError);
  EXPECT_THROW(rescale_coords(t, 8), DimensionError);
}

TEST(CombineMultiscale, SingleTensorEqualsCollapse) {
  SplitMix64 rng(81);
  SparseTensor t = oracle::random_sparse_tensor(rng, oracle::cube_spec(8), 3, 0.3);
  const BevMap combined = combine_multiscale({t});
  const BevMap collapsed = collapse_to_bev(t);
  ASSERT_EQ(combined.height, collapsed.height);
  ASSERT_EQ(combined.width, collapsed.width);
  EXPECT_LT(oracle::max_abs_diff(combined.data, collapsed.data), 1e-12);
}

TEST(CombineMultiscale, DisjointColumnsPlaceBlocks) {
  const VoxelGridSpec spec = oracle::cube_spec(4);
  SparseTensor a, b;
  a.spec = b.spec = spec;
  a.channels = b.channels = 1;
  a.stride = b.stride = 1;
  a.count = 1;
  a.coords = {0, 0, 0};
  a.features = {2.0};
  b.count = 1;
  b.coords = {3, 3, 3};
  b.features = {5.0};
  const BevMap m = combine_multiscale({a, b});
  EXPECT_DOUBLE_EQ(m.at(0, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(m.at(3, 3, 0), 5.0);
  EXPECT_DOUBLE_EQ(m.at(1, 1, 0), 0.0);
}

TEST(CombineMultiscale, MatchesScatterAddOracleAndUnionColumns) {
  SplitMix64 rng(82);
  const VoxelGridSpec spec = oracle::cube_spec(8);
  std::vector<SparseTensor> trio;
  for (int k = 0; k < 3; ++k) trio.push_back(oracle::random_sparse_tensor(rng, spec, 2, 0.25));
  const BevMap m = combine_multiscale(trio);

  std::vector<double> want(static_cast<size_t>(8) * 8 * 2, 0.0);
  std::set<std::pair<int, int>> columns;
  for (const auto& t : trio) {
    for (int i = 0; i < t.count; ++i) {
      const auto c = t.coord(i);
      columns.insert({c[1], c[2]});
      for (int ch = 0; ch < 2; ++ch) {
        want[(static_cast<size_t>(c[1]) * 8 + c[2]) * 2 + ch] += t.row(i)[ch];
      }
    }
  }
  EXPECT_LT(oracle::max_abs_diff(m.data, want), 1e-9);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const bool occupied = columns.count({y, x}) > 0;
      bool nonzero = false;
      for (int ch = 0; ch < 2; ++ch) nonzero |= m.at(y, x, ch) != 0.0;
      if (!occupied) {
        ASSERT_FALSE(nonzero);
      }
    }
  }
}

TEST(CombineMultiscale, BitwiseIndependentOfInputOrder) {
  SplitMix64 rng(83);
  const VoxelGridSpec spec = oracle::cube_spec(8);
  std::vector<SparseTensor> trio;
  for (int k = 0; k < 3; ++k) trio.push_back(oracle::random_sparse_tensor(rng, spec, 3, 0.35));
  const BevMap a = combine_multiscale({trio[0], trio[1], trio[2]});
  const BevMap b = combine_multiscale({trio[2], trio[0], trio[1]});
  ASSERT_EQ(a.data.size(), b.data.size());
  EXPECT_EQ(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)), 0);
}

TEST(CombineMultiscale, RejectsMismatchedInputs) {
  SplitMix64 rng(84);
  SparseTensor a = oracle::random_sparse_tensor(rng, oracle::cube_spec(4), 2, 0.5);
  SparseTensor b = oracle::random_sparse_tensor(rng, oracle::cube_spec(4), 3, 0.5);
  EXPECT_THROW(combine_multiscale({a, b}), DimensionError);
  SparseTensor c = a;
  c.stride = 2;
  EXPECT_THROW(combine_multiscale({a, c}), DimensionError);
  EXPECT_THROW(combine_multiscale({}), DimensionError);
}

}  // namespace
