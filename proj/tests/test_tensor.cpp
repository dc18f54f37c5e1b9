// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/tensor.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <vector>

namespace tedsim {
namespace {

TEST(Tensor, ZerosShapeAndNumel) {
  Tensor t = Tensor::zeros({3, 5});
  EXPECT_EQ(t.numel(), 15);
  EXPECT_EQ(t.rows(), 3);
  EXPECT_EQ(t.cols(), 5);
  for (double v : t.data) {
    EXPECT_EQ(v, 0.0);
  }
}

TEST(Tensor, OneDimensionalActsAsSingleRow) {
  Tensor t = Tensor::zeros({4});
  EXPECT_EQ(t.rows(), 1);
  EXPECT_EQ(t.cols(), 4);
  t.at(0, 2) = 7.0;
  EXPECT_EQ(t.data[2], 7.0);
}

TEST(Tensor, FromRowsLaysOutRowMajor) {
  Tensor t = Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}});
  ASSERT_EQ(t.rows(), 3);
  ASSERT_EQ(t.cols(), 2);
  EXPECT_EQ(t.at(0, 1), 2.0);
  EXPECT_EQ(t.at(2, 0), 5.0);
  EXPECT_EQ(t.data, (std::vector<double>{1, 2, 3, 4, 5, 6}));
}

TEST(Tensor, AccountedBytesFollowDeclaredWidth) {
  Tensor half = Tensor::zeros({2, 3}, StorageWidth::Half);
  Tensor single = Tensor::zeros({2, 3}, StorageWidth::Single);
  Tensor wide = Tensor::zeros({2, 3}, StorageWidth::Wide);
  EXPECT_EQ(half.accounted_bytes(), 6u * 2);
  EXPECT_EQ(single.accounted_bytes(), 6u * 4);
  EXPECT_EQ(wide.accounted_bytes(), 6u * 8);
}

TEST(ShardSpec, ColumnSliceTakesContiguousColumns) {
  Tensor full = Tensor::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}});
  Tensor left = slice_tensor(full, ShardSpec::column(0, 2));
  Tensor right = slice_tensor(full, ShardSpec::column(1, 2));
  ASSERT_EQ(left.cols(), 2);
  EXPECT_EQ(left.data, (std::vector<double>{1, 2, 5, 6}));
  EXPECT_EQ(right.data, (std::vector<double>{3, 4, 7, 8}));
}

TEST(ShardSpec, RowSliceTakesContiguousRows) {
  Tensor full = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}, {7, 8}});
  Tensor top = slice_tensor(full, ShardSpec::row(0, 2));
  Tensor bottom = slice_tensor(full, ShardSpec::row(1, 2));
  ASSERT_EQ(top.rows(), 2);
  EXPECT_EQ(top.data, (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(bottom.data, (std::vector<double>{5, 6, 7, 8}));
}

TEST(ShardSpec, FullSpecIsIdentity) {
  Tensor full = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor copy = slice_tensor(full, ShardSpec::full());
  EXPECT_EQ(copy.shape, full.shape);
  EXPECT_EQ(copy.data, full.data);
}

TEST(ShardSpec, OneDimensionalColumnSliceSplitsTheVector) {
  Tensor full = Tensor::from_rows({{1, 2, 3, 4, 5, 6}});
  full.shape = {6};
  Tensor mid = slice_tensor(full, ShardSpec::column(1, 3));
  ASSERT_EQ(mid.shape, (std::vector<std::int64_t>{2}));
  EXPECT_EQ(mid.data, (std::vector<double>{3, 4}));
}

TEST(ShardSpec, IndivisibleDimensionThrows) {
  Tensor full = Tensor::zeros({2, 5});
  EXPECT_THROW(slice_tensor(full, ShardSpec::column(0, 2)), InvalidConfigError);
  EXPECT_THROW(slice_tensor(full, ShardSpec::row(1, 3)), InvalidConfigError);
}

TEST(MixSeed, DistinctTagsGiveDistinctSeeds) {
  const std::uint64_t a = mix_seed(1, "layer0.attn.w1");
  const std::uint64_t b = mix_seed(1, "layer0.attn.w2");
  const std::uint64_t c = mix_seed(2, "layer0.attn.w1");
  EXPECT_NE(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a, mix_seed(1, "layer0.attn.w1"));
}

TEST(SeededInit, DeterministicAndBounded) {
  Tensor a = seeded_init({4, 6}, 99, 0.25);
  Tensor b = seeded_init({4, 6}, 99, 0.25);
  EXPECT_EQ(a.data, b.data);
  for (double v : a.data) {
    EXPECT_GE(v, -0.25);
    EXPECT_LT(v, 0.25);
  }
  Tensor c = seeded_init({4, 6}, 100, 0.25);
  EXPECT_NE(a.data, c.data);
}

// The property the whole parallel/serial comparison rests on: asking for a
// shard directly gives the exact sub-array of the full initialization.
TEST(SeededInit, ShardEqualsSliceOfFullInit) {
  const std::vector<std::int64_t> shape{8, 8};
  Tensor full = seeded_init(shape, 7, 0.1);
  for (int parts : {2, 4}) {
    for (int i = 0; i < parts; ++i) {
      Tensor col = seeded_init(shape, 7, 0.1, ShardSpec::column(i, parts));
      EXPECT_EQ(col.data, slice_tensor(full, ShardSpec::column(i, parts)).data);
      Tensor row = seeded_init(shape, 7, 0.1, ShardSpec::row(i, parts));
      EXPECT_EQ(row.data, slice_tensor(full, ShardSpec::row(i, parts)).data);
    }
  }
}

}  // namespace
}  // namespace tedsim
