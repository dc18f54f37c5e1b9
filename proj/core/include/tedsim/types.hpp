// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace tedsim {

using RankId = int;

// Declared element width used for byte accounting. Arithmetic is always done in
// double regardless of the declared width, so results are deterministic and the
// width only drives the communication/memory ledgers. Half models the 16-bit
// params/grads/activations of mixed-precision training, Single the 32-bit
// optimizer state, Wide the native double.
enum class StorageWidth : std::uint8_t { Half, Single, Wide };

constexpr std::size_t width_bytes(StorageWidth w) {
  switch (w) {
    case StorageWidth::Half: return 2;
    case StorageWidth::Single: return 4;
    case StorageWidth::Wide: return 8;
  }
  return 8;
}

// Which part of a training step a collective belongs to.
enum class Phase : std::uint8_t { Forward, Recompute, Backward, GradSync, Optim };
inline constexpr int kNumPhases = 5;

// Which process-group family a collective ran over.
enum class GroupKind : std::uint8_t { Tensor, Expert, DataExp, DataNonexp };
inline constexpr int kNumGroupKinds = 4;

enum class CollectiveOp : std::uint8_t { AllReduce, AllGather, AllToAll };
inline constexpr int kNumCollectiveOps = 3;

const char* to_string(Phase p);
const char* to_string(GroupKind k);
const char* to_string(CollectiveOp op);

// Thrown when a run or topology configuration violates a structural constraint.
// The message names the failing constraint and the offending values.
class InvalidConfigError : public std::runtime_error {
 public:
  explicit InvalidConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a group is built from bad member lists (duplicates, out of range).
class InvalidGroupError : public std::runtime_error {
 public:
  explicit InvalidGroupError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when members disagree inside a collective (mismatched lengths,
// wrong segment counts) or a caller is not a member of the group.
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a collective rendezvous gives up waiting for missing members.
class TimeoutError : public std::runtime_error {
 public:
  explicit TimeoutError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tedsim
