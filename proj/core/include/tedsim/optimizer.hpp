// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tedsim/types.hpp"

namespace tedsim {

// Decoupled-weight-decay Adam with bias correction. Arithmetic is double;
// the 16/32-bit structure of real mixed precision shows up only in the byte
// accounting (params/grads at 2 bytes, master copy and moments at 4).
struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Contiguous near-equal element split: the first (total % parts) shards get
// one extra element. Boundaries ignore tensor edges on purpose; the flattened
// family is one address space.
struct ShardRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  std::int64_t size() const { return end - begin; }
};

ShardRange shard_range(std::int64_t total, int parts, int index);

struct TileConfig {
  bool enabled = true;
  std::int64_t tile_size = 1'800'000;
};

// Stage-1 sharded optimizer state for one flattened parameter family on one
// rank. The rank owns a contiguous element range; updates walk it tile by
// tile through one reused up-cast buffer, so the transient footprint is
// 4 * min(tile_size, owned) bytes instead of 4 * owned.
struct OptimizerShard {
  AdamConfig adam;
  TileConfig tiles;
  int group_size = 1;
  int position = 0;
  std::int64_t family_elems = 0;
  ShardRange owned;

  std::vector<double> master;  // owned master weights, accounted at 4 bytes
  std::vector<double> m1;      // first moment, accounted at 4 bytes
  std::vector<double> m2;      // second moment, accounted at 4 bytes
  std::int64_t steps_done = 0;

  std::uint64_t upcast_peak_bytes = 0;  // max transient up-cast bytes seen

  static OptimizerShard create(const std::vector<double>& family_values, int group_size,
                               int position, const AdamConfig& adam, const TileConfig& tiles);

  // One optimizer step over the owned range. Reads the full-family gradient,
  // writes updated parameter values into out_full over the owned range only;
  // the data group's all-gather fills in the rest.
  void step_owned(const std::vector<double>& grad_full, std::vector<double>& out_full);

  // Re-seeds the master copy from freshly assigned parameter values and
  // clears the moments (used when a test overwrites parameters in place).
  void reset_master(const std::vector<double>& family_values);

  std::uint64_t state_bytes() const { return static_cast<std::uint64_t>(owned.size()) * 12; }
};

// Per-rank memory ledger. Persistent entries live for the whole run;
// transient entries are step peaks.
struct MemoryReport {
  std::uint64_t params_bytes = 0;
  std::uint64_t grads_bytes = 0;
  std::uint64_t optimizer_state_bytes = 0;
  std::uint64_t upcast_peak_bytes = 0;
  std::uint64_t cac_stash_peak_bytes = 0;
  std::uint64_t checkpoint_peak_bytes = 0;

  std::uint64_t persistent_total() const {
    return params_bytes + grads_bytes + optimizer_state_bytes;
  }
  std::uint64_t transient_peak_total() const {
    return upcast_peak_bytes + cac_stash_peak_bytes + checkpoint_peak_bytes;
  }

  std::string to_json() const;
};

}  // namespace tedsim
