// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tedsim {

ShardRange shard_range(std::int64_t total, int parts, int index) {
  if (parts < 1) {
    throw InvalidConfigError("shard_range: parts must be >= 1, got " + std::to_string(parts));
  }
  if (index < 0 || index >= parts) {
    throw InvalidConfigError("shard_range: index " + std::to_string(index) +
                             " outside [0, " + std::to_string(parts) + ")");
  }
  if (total < 0) {
    throw InvalidConfigError("shard_range: negative element count");
  }
  const std::int64_t base = total / parts;
  const std::int64_t extra = total % parts;
  const std::int64_t begin = index * base + std::min<std::int64_t>(index, extra);
  const std::int64_t len = base + (index < extra ? 1 : 0);
  return ShardRange{begin, begin + len};
}

OptimizerShard OptimizerShard::create(const std::vector<double>& family_values, int group_size,
                                      int position, const AdamConfig& adam,
                                      const TileConfig& tiles) {
  OptimizerShard s;
  s.adam = adam;
  s.tiles = tiles;
  s.group_size = group_size;
  s.position = position;
  s.family_elems = static_cast<std::int64_t>(family_values.size());
  s.owned = shard_range(s.family_elems, group_size, position);
  s.master.assign(family_values.begin() + s.owned.begin, family_values.begin() + s.owned.end);
  s.m1.assign(static_cast<std::size_t>(s.owned.size()), 0.0);
  s.m2.assign(static_cast<std::size_t>(s.owned.size()), 0.0);
  return s;
}

void OptimizerShard::reset_master(const std::vector<double>& family_values) {
  if (static_cast<std::int64_t>(family_values.size()) != family_elems) {
    throw InvalidConfigError("reset_master: family length changed from " +
                             std::to_string(family_elems) + " to " +
                             std::to_string(family_values.size()));
  }
  master.assign(family_values.begin() + owned.begin, family_values.begin() + owned.end);
  std::fill(m1.begin(), m1.end(), 0.0);
  std::fill(m2.begin(), m2.end(), 0.0);
  steps_done = 0;
}

void OptimizerShard::step_owned(const std::vector<double>& grad_full,
                                std::vector<double>& out_full) {
  if (static_cast<std::int64_t>(grad_full.size()) != family_elems) {
    throw InvalidConfigError("step_owned: gradient length " + std::to_string(grad_full.size()) +
                             " != family length " + std::to_string(family_elems));
  }
  if (static_cast<std::int64_t>(out_full.size()) != family_elems) {
    out_full.assign(static_cast<std::size_t>(family_elems), 0.0);
  }

  steps_done += 1;
  const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(steps_done));
  const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(steps_done));

  const std::int64_t owned_len = owned.size();
  const std::int64_t tile = tiles.enabled ? std::min(tiles.tile_size, std::max<std::int64_t>(owned_len, 1))
                                          : std::max<std::int64_t>(owned_len, 1);
  if (tiles.enabled && tiles.tile_size < 1) {
    throw InvalidConfigError("step_owned: tile_size must be >= 1, got " +
                             std::to_string(tiles.tile_size));
  }

  // One reused buffer stands in for the 16->32 bit gradient up-cast; its
  // footprint, not the math, is what tiling changes.
  std::vector<double> upcast(static_cast<std::size_t>(owned_len == 0 ? 0 : tile));
  upcast_peak_bytes = std::max<std::uint64_t>(
      upcast_peak_bytes, static_cast<std::uint64_t>(upcast.size()) * 4);

  for (std::int64_t at = 0; at < owned_len; at += tile) {
    const std::int64_t len = std::min(tile, owned_len - at);
    for (std::int64_t i = 0; i < len; ++i) {
      upcast[static_cast<std::size_t>(i)] = grad_full[static_cast<std::size_t>(owned.begin + at + i)];
    }
    for (std::int64_t i = 0; i < len; ++i) {
      const std::size_t j = static_cast<std::size_t>(at + i);
      const double g = upcast[static_cast<std::size_t>(i)];
      m1[j] = adam.beta1 * m1[j] + (1.0 - adam.beta1) * g;
      m2[j] = adam.beta2 * m2[j] + (1.0 - adam.beta2) * g * g;
      const double mhat = m1[j] / c1;
      const double vhat = m2[j] / c2;
      double p = master[j];
      p -= adam.lr * (mhat / (std::sqrt(vhat) + adam.eps) + adam.weight_decay * p);
      master[j] = p;
      out_full[static_cast<std::size_t>(owned.begin + at + i)] = p;
    }
  }
}

std::string MemoryReport::to_json() const {
  std::ostringstream os;
  os << "{\"persistent\":{"
     << "\"params_bytes\":" << params_bytes << ","
     << "\"grads_bytes\":" << grads_bytes << ","
     << "\"optimizer_state_bytes\":" << optimizer_state_bytes << ","
     << "\"total_bytes\":" << persistent_total() << "},"
     << "\"transient_peaks\":{"
     << "\"upcast_bytes\":" << upcast_peak_bytes << ","
     << "\"cac_stash_bytes\":" << cac_stash_peak_bytes << ","
     << "\"checkpoint_bytes\":" << checkpoint_peak_bytes << ","
     << "\"total_bytes\":" << transient_peak_total() << "}}";
  return os.str();
}

}  // namespace tedsim
