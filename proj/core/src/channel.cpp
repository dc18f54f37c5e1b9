// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/channel.hpp"

#include <string>

namespace tedsim {

void CollectiveChannel::begin(Phase phase, Mode mode, CommStash* stash) {
  phase_ = phase;
  mode_ = mode;
  stash_ = stash;
  if (mode != Mode::Live && stash == nullptr) {
    throw ProtocolError("record/replay channel mode needs a stash");
  }
  if (mode == Mode::Replay) stash->rewind();
}

std::vector<std::vector<double>> CollectiveChannel::dispatch(
    const Group& group, CollectiveOp op, std::vector<std::vector<double>> input,
    StorageWidth width) {
  if (mode_ == Mode::Replay) {
    if (stash_->cursor >= stash_->entries.size()) {
      throw ProtocolError("stash replay ran past the recorded call sequence");
    }
    const CommStash::Entry& e = stash_->entries[stash_->cursor++];
    if (e.op != op) {
      throw ProtocolError(std::string("stash replay mismatch: recorded ") + to_string(e.op) +
                          ", replaying " + to_string(op));
    }
    return e.payload;
  }

  std::vector<std::vector<double>> result;
  switch (op) {
    case CollectiveOp::AllReduce:
      result.push_back(fabric_->all_reduce(group, rank_, std::move(input[0]), phase_, width));
      break;
    case CollectiveOp::AllGather:
      result = fabric_->all_gather_v(group, rank_, std::move(input[0]), phase_, width);
      break;
    case CollectiveOp::AllToAll:
      result = fabric_->all_to_all_v(group, rank_, std::move(input), phase_, width);
      break;
  }
  if (mode_ == Mode::Record) {
    stash_->entries.push_back({op, result, width});
  }
  return result;
}

std::vector<double> CollectiveChannel::all_reduce(const Group& group, std::vector<double> buffer,
                                                  StorageWidth width) {
  if (group.size() == 1) return buffer;
  std::vector<std::vector<double>> in;
  in.push_back(std::move(buffer));
  return std::move(dispatch(group, CollectiveOp::AllReduce, std::move(in), width)[0]);
}

std::vector<double> CollectiveChannel::all_gather(const Group& group, std::vector<double> local,
                                                  StorageWidth width) {
  if (group.size() == 1) return local;
  // Equal-length gather expressed over the ragged primitive; callers that
  // need the invariant enforced go through Fabric::all_gather directly.
  std::vector<std::vector<double>> parts = all_gather_v(group, std::move(local), width);
  std::vector<double> cat;
  for (auto& p : parts) cat.insert(cat.end(), p.begin(), p.end());
  return cat;
}

std::vector<std::vector<double>> CollectiveChannel::all_gather_v(const Group& group,
                                                                 std::vector<double> local,
                                                                 StorageWidth width) {
  if (group.size() == 1) {
    std::vector<std::vector<double>> out;
    out.push_back(std::move(local));
    return out;
  }
  std::vector<std::vector<double>> in;
  in.push_back(std::move(local));
  return dispatch(group, CollectiveOp::AllGather, std::move(in), width);
}

std::vector<std::vector<double>> CollectiveChannel::all_to_all_v(
    const Group& group, std::vector<std::vector<double>> segments, StorageWidth width) {
  if (group.size() == 1) {
    if (segments.size() != 1) {
      throw ProtocolError("all_to_all_v on a singleton group needs exactly 1 segment, got " +
                          std::to_string(segments.size()));
    }
    return segments;
  }
  return dispatch(group, CollectiveOp::AllToAll, std::move(segments), width);
}

Tensor CollectiveChannel::all_reduce_tensor(const Group& group, const Tensor& t) {
  Tensor out = t;
  out.data = all_reduce(group, t.data, t.width);
  return out;
}

}  // namespace tedsim
