// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tedsim/types.hpp"

namespace tedsim {

// One accounting bucket of the communication ledger.
//
// calls          number of rank participations: every member of a collective
//                contributes 1 per call, so calls / world_size is the per-rank
//                (SPMD call-site) count for collectives that span all ranks.
// payload_bytes  payload sent per rank, summed over ranks, as element count
//                times declared element width. Exact integer arithmetic.
// metadata_bytes bookkeeping traffic that precedes the payload (the count
//                exchange of a variable all-to-all or all-gather), kept in a
//                separate bucket so payload figures stay comparable.
struct LedgerEntry {
  std::uint64_t calls = 0;
  std::uint64_t payload_bytes = 0;
  std::uint64_t metadata_bytes = 0;

  bool operator==(const LedgerEntry&) const = default;
};

struct LedgerRecord {
  Phase phase;
  GroupKind group_kind;
  CollectiveOp op;
  LedgerEntry entry;

  bool operator==(const LedgerRecord&) const = default;
};

// Communication ledger keyed by (phase, group kind, op). Values only grow
// between resets, and totals are order-independent sums, so two runs of the
// same schedule produce bit-identical ledgers no matter how the rank threads
// interleave. Not internally synchronized; the fabric serializes updates.
class CommLedger {
 public:
  void record(Phase phase, GroupKind kind, CollectiveOp op, std::uint64_t calls,
              std::uint64_t payload_bytes, std::uint64_t metadata_bytes);

  const LedgerEntry& at(Phase phase, GroupKind kind, CollectiveOp op) const;

  // Sums over every (phase, kind) bucket for one op.
  LedgerEntry total(CollectiveOp op) const;
  // Sums over the named phases (any kind) for one op.
  LedgerEntry total(CollectiveOp op, std::initializer_list<Phase> phases) const;
  // Grand total over everything.
  LedgerEntry grand_total() const;

  void reset();

  // Nonzero buckets in fixed (phase, kind, op) enumeration order.
  std::vector<LedgerRecord> records() const;

  // Accumulates another ledger into this one.
  void merge(const CommLedger& other);

  bool operator==(const CommLedger&) const = default;

  std::string to_json() const;  // JSON array of record objects
  std::string to_csv() const;   // header + one row per nonzero record

 private:
  std::array<LedgerEntry, kNumPhases * kNumGroupKinds * kNumCollectiveOps> entries_{};

  static std::size_t index(Phase phase, GroupKind kind, CollectiveOp op);
};

}  // namespace tedsim
