// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "tedsim/types.hpp"

namespace tedsim {

// Row-major dense tensor. Data is always double; `width` is the declared
// storage width used for byte accounting only (see StorageWidth).
struct Tensor {
  std::vector<std::int64_t> shape;
  StorageWidth width = StorageWidth::Half;
  std::vector<double> data;

  static Tensor zeros(std::vector<std::int64_t> shape, StorageWidth width = StorageWidth::Half);
  static Tensor from_rows(std::vector<std::vector<double>> rows,
                          StorageWidth width = StorageWidth::Half);

  std::int64_t numel() const;
  std::uint64_t accounted_bytes() const { return numel() * width_bytes(width); }

  // 2-D accessors; a 1-D tensor behaves as a single row.
  std::int64_t rows() const;
  std::int64_t cols() const;
  double& at(std::int64_t r, std::int64_t c);
  double at(std::int64_t r, std::int64_t c) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

// How a parameter tensor is split across the tensor-parallel group.
enum class ShardAxis : std::uint8_t { None, Column, Row };

struct ShardSpec {
  ShardAxis axis = ShardAxis::None;
  int index = 0;
  int count = 1;

  static ShardSpec full() { return {}; }
  static ShardSpec column(int index, int count) { return {ShardAxis::Column, index, count}; }
  static ShardSpec row(int index, int count) { return {ShardAxis::Row, index, count}; }
};

// Cuts the requested shard out of a full tensor. The sharded dimension must
// divide evenly; violations throw InvalidConfigError naming the dimension.
Tensor slice_tensor(const Tensor& full, const ShardSpec& spec);

// Derives a per-tensor seed from a model seed and a stable name tag.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag);

// Deterministic initialization: materializes the FULL tensor from `seed` with
// a portable generator (mt19937_64 mapped to [-scale, scale)), then returns
// the requested slice. Shards of one logical tensor are therefore exact
// sub-arrays of the full initialization no matter which rank asks, which is
// what makes the parallel model bitwise comparable with the serial reference.
Tensor seeded_init(std::vector<std::int64_t> shape, std::uint64_t seed, double scale,
                   const ShardSpec& spec = ShardSpec::full(),
                   StorageWidth width = StorageWidth::Half);

}  // namespace tedsim
