// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <vector>

#include "tedsim/ledger.hpp"
#include "tedsim/types.hpp"

namespace tedsim {

// Handle to a process group registered with a Fabric. Plain value; the fabric
// owns the rendezvous state behind `id`.
struct Group {
  int id = -1;
  GroupKind kind = GroupKind::Tensor;
  std::vector<RankId> members;

  int size() const { return static_cast<int>(members.size()); }

  // Position of `rank` within the member list; throws ProtocolError for
  // non-members.
  int position_of(RankId rank) const;
};

// Simulated communication fabric: a set of ranks (threads, or one thread
// taking turns) that meet in blocking collectives. Every collective is a
// rendezvous over the full group: each member deposits its buffer, the last
// arrival combines all contributions in a fixed member order, and everyone
// picks up its result. Reductions are evaluated in ascending member order, so
// results and the communication ledger are independent of thread scheduling.
//
// A member that never shows up stalls the group; waiting members throw
// TimeoutError after `collective_timeout` and retract their deposits.
class Fabric {
 public:
  explicit Fabric(int world_size);
  ~Fabric();

  Fabric(const Fabric&) = delete;
  Fabric& operator=(const Fabric&) = delete;

  int world_size() const { return world_size_; }

  // Registers a group. Members must be distinct valid ranks; a singleton
  // group is legal and its collectives are ledgered like any other.
  Group new_group(std::vector<RankId> ranks, GroupKind kind);

  // Element-wise sum over the group, evaluated member 0 + member 1 + ... in
  // ascending member order. All buffers must have equal length.
  std::vector<double> all_reduce(const Group& group, RankId rank, std::vector<double> buffer,
                                 Phase phase, StorageWidth width);

  // Concatenation of equal-length local buffers in member order.
  std::vector<double> all_gather(const Group& group, RankId rank, std::vector<double> local,
                                 Phase phase, StorageWidth width);

  // Variable-length gather: every member receives each member's buffer,
  // returned per source in member order. A one-integer-per-member length
  // exchange is accounted in the ledger entry's metadata bucket.
  std::vector<std::vector<double>> all_gather_v(const Group& group, RankId rank,
                                                std::vector<double> local, Phase phase,
                                                StorageWidth width);

  // Personalized exchange: `segments[j]` goes to member j (including the self
  // segment, which is accounted like any other). Returns the received
  // segments per source in member order. The count exchange (one integer per
  // peer per member) is accounted in the metadata bucket.
  std::vector<std::vector<double>> all_to_all_v(const Group& group, RankId rank,
                                                std::vector<std::vector<double>> segments,
                                                Phase phase, StorageWidth width);

  CommLedger ledger_snapshot() const;
  void reset_ledger();

  void set_collective_timeout(std::chrono::milliseconds timeout);

 private:
  struct GroupState;

  GroupState& state_for(const Group& group);
  void check_member_ranks(const std::vector<RankId>& ranks) const;

  int world_size_;
  std::chrono::milliseconds timeout_{std::chrono::milliseconds(20000)};
  mutable std::mutex ledger_mu_;
  CommLedger ledger_;
  mutable std::mutex groups_mu_;
  std::vector<std::unique_ptr<GroupState>> groups_;
};

}  // namespace tedsim
