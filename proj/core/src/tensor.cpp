// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/tensor.hpp"

#include <random>
#include <string>

namespace tedsim {

Tensor Tensor::zeros(std::vector<std::int64_t> shape, StorageWidth width) {
  Tensor t;
  t.shape = std::move(shape);
  t.width = width;
  t.data.assign(static_cast<std::size_t>(t.numel()), 0.0);
  return t;
}

Tensor Tensor::from_rows(std::vector<std::vector<double>> rows, StorageWidth width) {
  Tensor t;
  const std::int64_t r = static_cast<std::int64_t>(rows.size());
  const std::int64_t c = r > 0 ? static_cast<std::int64_t>(rows[0].size()) : 0;
  t.shape = {r, c};
  t.width = width;
  t.data.reserve(static_cast<std::size_t>(r * c));
  for (const auto& row : rows) {
    if (static_cast<std::int64_t>(row.size()) != c) {
      throw InvalidConfigError("from_rows: ragged row lengths");
    }
    t.data.insert(t.data.end(), row.begin(), row.end());
  }
  return t;
}

std::int64_t Tensor::numel() const {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

std::int64_t Tensor::rows() const { return shape.size() >= 2 ? shape[0] : 1; }

std::int64_t Tensor::cols() const {
  if (shape.empty()) return 0;
  return shape.size() >= 2 ? shape[1] : shape[0];
}

double& Tensor::at(std::int64_t r, std::int64_t c) {
  return data[static_cast<std::size_t>(r * cols() + c)];
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
  return data[static_cast<std::size_t>(r * cols() + c)];
}

Tensor slice_tensor(const Tensor& full, const ShardSpec& spec) {
  if (spec.axis == ShardAxis::None || spec.count == 1) return full;
  if (spec.index < 0 || spec.index >= spec.count) {
    throw InvalidConfigError("shard index " + std::to_string(spec.index) +
                             " outside [0, " + std::to_string(spec.count) + ")");
  }

  const std::int64_t r = full.rows();
  const std::int64_t c = full.cols();
  Tensor out;
  out.width = full.width;

  if (spec.axis == ShardAxis::Column) {
    if (c % spec.count != 0) {
      throw InvalidConfigError("column count " + std::to_string(c) +
                               " not divisible by shard count " + std::to_string(spec.count));
    }
    const std::int64_t w = c / spec.count;
    const std::int64_t off = spec.index * w;
    out.shape = full.shape.size() >= 2 ? std::vector<std::int64_t>{r, w}
                                       : std::vector<std::int64_t>{w};
    out.data.reserve(static_cast<std::size_t>(r * w));
    for (std::int64_t i = 0; i < r; ++i) {
      for (std::int64_t j = 0; j < w; ++j) out.data.push_back(full.at(i, off + j));
    }
    return out;
  }

  // Row shard; requires a 2-D tensor.
  if (full.shape.size() < 2) {
    throw InvalidConfigError("row shard of a 1-D tensor");
  }
  if (r % spec.count != 0) {
    throw InvalidConfigError("row count " + std::to_string(r) +
                             " not divisible by shard count " + std::to_string(spec.count));
  }
  const std::int64_t hrows = r / spec.count;
  const std::int64_t off = spec.index * hrows;
  out.shape = {hrows, c};
  out.data.assign(full.data.begin() + static_cast<std::size_t>(off * c),
                  full.data.begin() + static_cast<std::size_t>((off + hrows) * c));
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  // FNV-1a over the tag, folded into the seed with a splitmix-style finisher.
  std::uint64_t h = 14695981039346656037ULL;
  for (char ch : tag) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL + h;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor seeded_init(std::vector<std::int64_t> shape, std::uint64_t seed, double scale,
                   const ShardSpec& spec, StorageWidth width) {
  Tensor full;
  full.shape = std::move(shape);
  full.width = width;
  const std::int64_t n = full.numel();
  full.data.reserve(static_cast<std::size_t>(n));

  // mt19937_64's output sequence is pinned by the standard; the top 53 bits
  // map to a double in [0, 1), so the values are identical on any platform.
  std::mt19937_64 eng(seed);
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = static_cast<double>(eng() >> 11) * 0x1.0p-53;
    full.data.push_back((2.0 * u - 1.0) * scale);
  }
  return slice_tensor(full, spec);
}

}  // namespace tedsim
