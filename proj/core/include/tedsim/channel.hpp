// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "tedsim/fabric.hpp"
#include "tedsim/tensor.hpp"
#include "tedsim/types.hpp"

namespace tedsim {

// Recorded collective results, in call order. Written during a recorded
// forward pass, read back during recomputation so the recompute issues zero
// fabric calls, and cleared once the consuming backward pass is done.
struct CommStash {
  struct Entry {
    CollectiveOp op;
    std::vector<std::vector<double>> payload;
    StorageWidth width;
  };

  std::vector<Entry> entries;
  std::size_t cursor = 0;

  std::uint64_t accounted_bytes() const {
    std::uint64_t total = 0;
    for (const Entry& e : entries) {
      for (const auto& seg : e.payload) total += seg.size() * width_bytes(e.width);
    }
    return total;
  }

  void rewind() { cursor = 0; }
  void clear() {
    entries.clear();
    cursor = 0;
  }
};

// Per-rank front end to the fabric that layers three behaviors over the raw
// collectives:
//
//   Live    call the fabric.
//   Record  call the fabric and append each result to a stash.
//   Replay  return the next stashed result instead of communicating.
//
// Singleton groups short-circuit locally in every mode (no fabric call, no
// ledger entry, no stash entry), so the three modes always stay aligned.
class CollectiveChannel {
 public:
  enum class Mode { Live, Record, Replay };

  CollectiveChannel(Fabric& fabric, RankId rank) : fabric_(&fabric), rank_(rank) {}

  void begin(Phase phase, Mode mode, CommStash* stash = nullptr);
  Phase phase() const { return phase_; }
  RankId rank() const { return rank_; }

  std::vector<double> all_reduce(const Group& group, std::vector<double> buffer,
                                 StorageWidth width);
  std::vector<double> all_gather(const Group& group, std::vector<double> local,
                                 StorageWidth width);
  std::vector<std::vector<double>> all_gather_v(const Group& group, std::vector<double> local,
                                                StorageWidth width);
  std::vector<std::vector<double>> all_to_all_v(const Group& group,
                                                std::vector<std::vector<double>> segments,
                                                StorageWidth width);

  // Shape-preserving convenience for the common all-reduce-a-tensor case.
  Tensor all_reduce_tensor(const Group& group, const Tensor& t);

 private:
  std::vector<std::vector<double>> dispatch(const Group& group, CollectiveOp op,
                                            std::vector<std::vector<double>> input,
                                            StorageWidth width);

  Fabric* fabric_;
  RankId rank_;
  Phase phase_ = Phase::Forward;
  Mode mode_ = Mode::Live;
  CommStash* stash_ = nullptr;
};

}  // namespace tedsim
