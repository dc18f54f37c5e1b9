// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/fabric.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <sstream>
#include <unordered_set>

namespace tedsim {
namespace {

// One member's deposit: a list of buffers. all_reduce / all_gather use a
// single buffer; all_to_all_v uses one segment per destination.
using Contribution = std::vector<std::vector<double>>;

std::string describe_group(const Group& g) {
  std::ostringstream os;
  os << "group " << g.id << " (" << to_string(g.kind) << ", size " << g.size() << ")";
  return os.str();
}

}  // namespace

int Group::position_of(RankId rank) const {
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i] == rank) return static_cast<int>(i);
  }
  throw ProtocolError("rank " + std::to_string(rank) + " is not a member of group " +
                      std::to_string(id));
}

// Reusable rendezvous slot. A collective runs in two halves: members deposit
// until everyone has arrived (the last arrival runs the combine exactly once),
// then members depart with their outputs. The slot reopens for the next
// collective only after the last departure, so back-to-back calls on one group
// cannot trample each other.
struct Fabric::GroupState {
  Group group;

  std::mutex mu;
  std::condition_variable cv;
  bool open = true;
  int arrived = 0;
  int departed = 0;
  std::uint64_t round = 0;
  std::vector<std::optional<Contribution>> inputs;
  std::vector<Contribution> outputs;
  std::string error;  // non-empty when the combine failed; everyone rethrows

  explicit GroupState(Group g) : group(std::move(g)) {
    inputs.resize(group.members.size());
    outputs.resize(group.members.size());
  }

  // combine: inputs (all present) -> per-member outputs; runs under the lock.
  Contribution exchange(int pos, Contribution in, std::chrono::milliseconds timeout,
                        const std::function<std::vector<Contribution>(
                            const std::vector<std::optional<Contribution>>&)>& combine) {
    const int size = static_cast<int>(group.members.size());
    std::unique_lock<std::mutex> lk(mu);

    if (!cv.wait_for(lk, timeout, [&] { return open; })) {
      throw TimeoutError("collective rendezvous on " + describe_group(group) +
                         " timed out waiting for the previous call to drain");
    }
    if (inputs[pos].has_value()) {
      throw ProtocolError("member " + std::to_string(pos) + " deposited twice in " +
                          describe_group(group));
    }
    inputs[pos] = std::move(in);
    ++arrived;

    if (arrived == size) {
      open = false;
      error.clear();
      try {
        std::vector<Contribution> outs = combine(inputs);
        for (int i = 0; i < size; ++i) outputs[i] = std::move(outs[i]);
      } catch (const std::exception& e) {
        error = e.what();
      }
      ++round;
      cv.notify_all();
    } else {
      const std::uint64_t my_round = round;
      if (!cv.wait_for(lk, timeout, [&] { return round != my_round; })) {
        // Retract the deposit so a later successful call is not corrupted.
        inputs[pos].reset();
        --arrived;
        throw TimeoutError("collective on " + describe_group(group) + " timed out: " +
                           std::to_string(size - arrived - 1) +
                           " member(s) never called (deadlock)");
      }
    }

    std::string err = error;
    Contribution out = err.empty() ? std::move(outputs[pos]) : Contribution{};
    ++departed;
    if (departed == size) {
      arrived = 0;
      departed = 0;
      for (auto& slot : inputs) slot.reset();
      open = true;
      cv.notify_all();
    }
    if (!err.empty()) throw ProtocolError(err);
    return out;
  }
};

Fabric::Fabric(int world_size) : world_size_(world_size) {
  if (world_size < 1) {
    throw InvalidConfigError("world_size must be >= 1, got " + std::to_string(world_size));
  }
}

Fabric::~Fabric() = default;

void Fabric::check_member_ranks(const std::vector<RankId>& ranks) const {
  if (ranks.empty()) throw InvalidGroupError("group must have at least one member");
  std::unordered_set<RankId> seen;
  for (RankId r : ranks) {
    if (r < 0 || r >= world_size_) {
      throw InvalidGroupError("group member " + std::to_string(r) +
                              " is outside world [0, " + std::to_string(world_size_) + ")");
    }
    if (!seen.insert(r).second) {
      throw InvalidGroupError("group member " + std::to_string(r) + " listed twice");
    }
  }
}

Group Fabric::new_group(std::vector<RankId> ranks, GroupKind kind) {
  check_member_ranks(ranks);
  std::lock_guard<std::mutex> lk(groups_mu_);
  Group g;
  g.id = static_cast<int>(groups_.size());
  g.kind = kind;
  g.members = std::move(ranks);
  groups_.push_back(std::make_unique<GroupState>(g));
  return g;
}

Fabric::GroupState& Fabric::state_for(const Group& group) {
  std::lock_guard<std::mutex> lk(groups_mu_);
  if (group.id < 0 || group.id >= static_cast<int>(groups_.size())) {
    throw InvalidGroupError("group id " + std::to_string(group.id) +
                            " is not registered with this fabric");
  }
  return *groups_[group.id];
}

std::vector<double> Fabric::all_reduce(const Group& group, RankId rank,
                                       std::vector<double> buffer, Phase phase,
                                       StorageWidth width) {
  GroupState& st = state_for(group);
  const int pos = group.position_of(rank);
  const int g = group.size();

  Contribution out = st.exchange(
      pos, Contribution{std::move(buffer)}, timeout_,
      [&](const std::vector<std::optional<Contribution>>& ins) {
        const std::size_t len = (*ins[0])[0].size();
        for (int i = 0; i < g; ++i) {
          if ((*ins[i])[0].size() != len) {
            throw ProtocolError("all_reduce on " + describe_group(group) +
                                ": member buffer lengths differ (" + std::to_string(len) +
                                " vs " + std::to_string((*ins[i])[0].size()) + ")");
          }
        }
        // Sequential sum in ascending member order, the determinism contract.
        std::vector<double> sum((*ins[0])[0]);
        for (int i = 1; i < g; ++i) {
          const std::vector<double>& b = (*ins[i])[0];
          for (std::size_t j = 0; j < len; ++j) sum[j] += b[j];
        }
        {
          std::lock_guard<std::mutex> llk(ledger_mu_);
          ledger_.record(phase, group.kind, CollectiveOp::AllReduce,
                         static_cast<std::uint64_t>(g),
                         static_cast<std::uint64_t>(g) * len * width_bytes(width), 0);
        }
        return std::vector<Contribution>(g, Contribution{sum});
      });
  return std::move(out[0]);
}

std::vector<double> Fabric::all_gather(const Group& group, RankId rank, std::vector<double> local,
                                       Phase phase, StorageWidth width) {
  GroupState& st = state_for(group);
  const int pos = group.position_of(rank);
  const int g = group.size();

  Contribution out = st.exchange(
      pos, Contribution{std::move(local)}, timeout_,
      [&](const std::vector<std::optional<Contribution>>& ins) {
        const std::size_t len = (*ins[0])[0].size();
        std::vector<double> cat;
        cat.reserve(len * g);
        for (int i = 0; i < g; ++i) {
          if ((*ins[i])[0].size() != len) {
            throw ProtocolError("all_gather on " + describe_group(group) +
                                ": equal lengths required, got " + std::to_string(len) +
                                " vs " + std::to_string((*ins[i])[0].size()) +
                                " (use all_gather_v for ragged buffers)");
          }
          cat.insert(cat.end(), (*ins[i])[0].begin(), (*ins[i])[0].end());
        }
        {
          std::lock_guard<std::mutex> llk(ledger_mu_);
          ledger_.record(phase, group.kind, CollectiveOp::AllGather,
                         static_cast<std::uint64_t>(g),
                         static_cast<std::uint64_t>(g) * len * width_bytes(width), 0);
        }
        return std::vector<Contribution>(g, Contribution{cat});
      });
  return std::move(out[0]);
}

std::vector<std::vector<double>> Fabric::all_gather_v(const Group& group, RankId rank,
                                                      std::vector<double> local, Phase phase,
                                                      StorageWidth width) {
  GroupState& st = state_for(group);
  const int pos = group.position_of(rank);
  const int g = group.size();

  return st.exchange(
      pos, Contribution{std::move(local)}, timeout_,
      [&](const std::vector<std::optional<Contribution>>& ins) {
        std::uint64_t elems = 0;
        Contribution per_source(g);
        for (int i = 0; i < g; ++i) {
          per_source[i] = (*ins[i])[0];
          elems += per_source[i].size();
        }
        {
          std::lock_guard<std::mutex> llk(ledger_mu_);
          // Length exchange: each member announces one 8-byte count.
          ledger_.record(phase, group.kind, CollectiveOp::AllGather,
                         static_cast<std::uint64_t>(g), elems * width_bytes(width),
                         static_cast<std::uint64_t>(g) * 8);
        }
        return std::vector<Contribution>(g, per_source);
      });
}

std::vector<std::vector<double>> Fabric::all_to_all_v(const Group& group, RankId rank,
                                                      std::vector<std::vector<double>> segments,
                                                      Phase phase, StorageWidth width) {
  GroupState& st = state_for(group);
  const int pos = group.position_of(rank);
  const int g = group.size();
  if (static_cast<int>(segments.size()) != g) {
    throw ProtocolError("all_to_all_v on " + describe_group(group) + ": member " +
                        std::to_string(pos) + " provided " + std::to_string(segments.size()) +
                        " segments, need one per member (" + std::to_string(g) + ")");
  }

  return st.exchange(
      pos, std::move(segments), timeout_,
      [&](const std::vector<std::optional<Contribution>>& ins) {
        std::uint64_t elems = 0;
        for (int i = 0; i < g; ++i) {
          if (static_cast<int>(ins[i]->size()) != g) {
            throw ProtocolError("all_to_all_v on " + describe_group(group) + ": member " +
                                std::to_string(i) + " provided " +
                                std::to_string(ins[i]->size()) + " segments, expected " +
                                std::to_string(g));
          }
          for (const std::vector<double>& seg : *ins[i]) elems += seg.size();
        }
        std::vector<Contribution> outs(g);
        for (int dst = 0; dst < g; ++dst) {
          outs[dst].resize(g);
          for (int src = 0; src < g; ++src) outs[dst][src] = (*ins[src])[dst];
        }
        {
          std::lock_guard<std::mutex> llk(ledger_mu_);
          // Count exchange: one 8-byte integer per peer per member.
          ledger_.record(phase, group.kind, CollectiveOp::AllToAll,
                         static_cast<std::uint64_t>(g), elems * width_bytes(width),
                         static_cast<std::uint64_t>(g) * g * 8);
        }
        return outs;
      });
}

CommLedger Fabric::ledger_snapshot() const {
  std::lock_guard<std::mutex> lk(ledger_mu_);
  return ledger_;
}

void Fabric::reset_ledger() {
  std::lock_guard<std::mutex> lk(ledger_mu_);
  ledger_.reset();
}

void Fabric::set_collective_timeout(std::chrono::milliseconds timeout) { timeout_ = timeout; }

}  // namespace tedsim
