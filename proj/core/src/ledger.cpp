// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/ledger.hpp"

#include <sstream>

namespace tedsim {

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Forward: return "forward";
    case Phase::Recompute: return "recompute";
    case Phase::Backward: return "backward";
    case Phase::GradSync: return "grad-sync";
    case Phase::Optim: return "optim";
  }
  return "?";
}

const char* to_string(GroupKind k) {
  switch (k) {
    case GroupKind::Tensor: return "tensor";
    case GroupKind::Expert: return "expert";
    case GroupKind::DataExp: return "data-exp";
    case GroupKind::DataNonexp: return "data-nonexp";
  }
  return "?";
}

const char* to_string(CollectiveOp op) {
  switch (op) {
    case CollectiveOp::AllReduce: return "all-reduce";
    case CollectiveOp::AllGather: return "all-gather";
    case CollectiveOp::AllToAll: return "all-to-all";
  }
  return "?";
}

std::size_t CommLedger::index(Phase phase, GroupKind kind, CollectiveOp op) {
  return (static_cast<std::size_t>(phase) * kNumGroupKinds + static_cast<std::size_t>(kind)) *
             kNumCollectiveOps +
         static_cast<std::size_t>(op);
}

void CommLedger::record(Phase phase, GroupKind kind, CollectiveOp op, std::uint64_t calls,
                        std::uint64_t payload_bytes, std::uint64_t metadata_bytes) {
  LedgerEntry& e = entries_[index(phase, kind, op)];
  e.calls += calls;
  e.payload_bytes += payload_bytes;
  e.metadata_bytes += metadata_bytes;
}

const LedgerEntry& CommLedger::at(Phase phase, GroupKind kind, CollectiveOp op) const {
  return entries_[index(phase, kind, op)];
}

LedgerEntry CommLedger::total(CollectiveOp op) const {
  return total(op, {Phase::Forward, Phase::Recompute, Phase::Backward, Phase::GradSync,
                    Phase::Optim});
}

LedgerEntry CommLedger::total(CollectiveOp op, std::initializer_list<Phase> phases) const {
  LedgerEntry sum;
  for (Phase p : phases) {
    for (int k = 0; k < kNumGroupKinds; ++k) {
      const LedgerEntry& e = entries_[index(p, static_cast<GroupKind>(k), op)];
      sum.calls += e.calls;
      sum.payload_bytes += e.payload_bytes;
      sum.metadata_bytes += e.metadata_bytes;
    }
  }
  return sum;
}

LedgerEntry CommLedger::grand_total() const {
  LedgerEntry sum;
  for (const LedgerEntry& e : entries_) {
    sum.calls += e.calls;
    sum.payload_bytes += e.payload_bytes;
    sum.metadata_bytes += e.metadata_bytes;
  }
  return sum;
}

void CommLedger::reset() { entries_.fill(LedgerEntry{}); }

std::vector<LedgerRecord> CommLedger::records() const {
  std::vector<LedgerRecord> out;
  for (int p = 0; p < kNumPhases; ++p) {
    for (int k = 0; k < kNumGroupKinds; ++k) {
      for (int o = 0; o < kNumCollectiveOps; ++o) {
        const LedgerEntry& e =
            entries_[index(static_cast<Phase>(p), static_cast<GroupKind>(k),
                           static_cast<CollectiveOp>(o))];
        if (e.calls != 0 || e.payload_bytes != 0 || e.metadata_bytes != 0) {
          out.push_back({static_cast<Phase>(p), static_cast<GroupKind>(k),
                         static_cast<CollectiveOp>(o), e});
        }
      }
    }
  }
  return out;
}

void CommLedger::merge(const CommLedger& other) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    entries_[i].calls += other.entries_[i].calls;
    entries_[i].payload_bytes += other.entries_[i].payload_bytes;
    entries_[i].metadata_bytes += other.entries_[i].metadata_bytes;
  }
}

std::string CommLedger::to_json() const {
  std::ostringstream os;
  os << "[";
  bool first = true;
  for (const LedgerRecord& r : records()) {
    if (!first) os << ",";
    first = false;
    os << "{\"phase\":\"" << to_string(r.phase) << "\",\"group_kind\":\""
       << to_string(r.group_kind) << "\",\"op\":\"" << to_string(r.op)
       << "\",\"calls\":" << r.entry.calls << ",\"payload_bytes\":" << r.entry.payload_bytes
       << ",\"metadata_bytes\":" << r.entry.metadata_bytes << "}";
  }
  os << "]";
  return os.str();
}

std::string CommLedger::to_csv() const {
  std::ostringstream os;
  os << "phase,group_kind,op,calls,payload_bytes,metadata_bytes\n";
  for (const LedgerRecord& r : records()) {
    os << to_string(r.phase) << "," << to_string(r.group_kind) << "," << to_string(r.op) << ","
       << r.entry.calls << "," << r.entry.payload_bytes << "," << r.entry.metadata_bytes << "\n";
  }
  return os.str();
}

}  // namespace tedsim
