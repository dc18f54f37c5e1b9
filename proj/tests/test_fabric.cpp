// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/fabric.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <vector>

#include "tedsim/runner.hpp"

namespace tedsim {
namespace {

TEST(Fabric, AllReduceSumsAcrossRanks) {
  Fabric fabric(3);
  Group g = fabric.new_group({0, 1, 2}, GroupKind::Tensor);
  std::vector<std::vector<double>> out(3);
  run_ranks(3, [&](RankId r) {
    std::vector<double> buf{double(r), 10.0 * (r + 1)};
    out[r] = fabric.all_reduce(g, r, buf, Phase::Forward, StorageWidth::Half);
  });
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(out[r], (std::vector<double>{3.0, 60.0}));
  }
}

// The determinism contract: contributions combine in ascending member order.
// The values are chosen so that other association orders round differently.
TEST(Fabric, AllReduceAccumulatesInAscendingMemberOrder) {
  Fabric fabric(3);
  Group g = fabric.new_group({0, 1, 2}, GroupKind::Tensor);
  const std::vector<double> contrib{1.0, 1e16, -1e16};
  std::vector<double> results(3);
  run_ranks(3, [&](RankId r) {
    results[r] = fabric.all_reduce(g, r, {contrib[r]}, Phase::Forward, StorageWidth::Half)[0];
  });
  const double ascending = (contrib[0] + contrib[1]) + contrib[2];
  EXPECT_EQ(ascending, 0.0);  // (1 + 1e16) rounds to 1e16 before cancelling
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(results[r], ascending);
  }
}

TEST(Fabric, AllReduceLengthMismatchThrows) {
  Fabric fabric(2);
  Group g = fabric.new_group({0, 1}, GroupKind::Tensor);
  EXPECT_THROW(run_ranks(2,
                         [&](RankId r) {
                           std::vector<double> buf(r == 0 ? 2 : 3, 1.0);
                           fabric.all_reduce(g, r, buf, Phase::Forward, StorageWidth::Half);
                         }),
               ProtocolError);
}

TEST(Fabric, AllGatherConcatenatesInMemberOrder) {
  Fabric fabric(3);
  Group g = fabric.new_group({0, 1, 2}, GroupKind::DataExp);
  std::vector<std::vector<double>> out(3);
  run_ranks(3, [&](RankId r) {
    out[r] = fabric.all_gather(g, r, {double(r), double(r) + 0.5}, Phase::Optim,
                               StorageWidth::Half);
  });
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(out[r], (std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0, 2.5}));
  }
}

TEST(Fabric, AllGatherVariableReturnsPerSourceBuffers) {
  Fabric fabric(3);
  Group g = fabric.new_group({0, 1, 2}, GroupKind::Tensor);
  std::vector<std::vector<std::vector<double>>> out(3);
  run_ranks(3, [&](RankId r) {
    std::vector<double> local(static_cast<std::size_t>(r) + 1, double(r));
    out[r] = fabric.all_gather_v(g, r, local, Phase::Forward, StorageWidth::Half);
  });
  for (int r = 0; r < 3; ++r) {
    ASSERT_EQ(out[r].size(), 3u);
    EXPECT_EQ(out[r][0], std::vector<double>{0.0});
    EXPECT_EQ(out[r][1], (std::vector<double>{1.0, 1.0}));
    EXPECT_EQ(out[r][2], (std::vector<double>{2.0, 2.0, 2.0}));
  }
}

TEST(Fabric, AllToAllDeliversSegmentsToTheirTargets) {
  Fabric fabric(2);
  Group g = fabric.new_group({0, 1}, GroupKind::Expert);
  std::vector<std::vector<std::vector<double>>> out(2);
  run_ranks(2, [&](RankId r) {
    std::vector<std::vector<double>> segs;
    if (r == 0) {
      segs = {{1.0}, {2.0, 3.0}};
    } else {
      segs = {{4.0, 5.0}, {6.0}};
    }
    out[r] = fabric.all_to_all_v(g, r, segs, Phase::Forward, StorageWidth::Half);
  });
  EXPECT_EQ(out[0][0], std::vector<double>{1.0});
  EXPECT_EQ(out[0][1], (std::vector<double>{4.0, 5.0}));
  EXPECT_EQ(out[1][0], (std::vector<double>{2.0, 3.0}));
  EXPECT_EQ(out[1][1], std::vector<double>{6.0});
}

TEST(Fabric, AllToAllSegmentCountMustMatchGroupSize) {
  Fabric fabric(2);
  Group g = fabric.new_group({0, 1}, GroupKind::Expert);
  // Every member presents one segment too many; the mismatch is rejected
  // before any rendezvous, so no member is left waiting.
  EXPECT_THROW(run_ranks(2,
                         [&](RankId r) {
                           std::vector<std::vector<double>> segs(3);
                           fabric.all_to_all_v(g, r, segs, Phase::Forward, StorageWidth::Half);
                         }),
               ProtocolError);
}

TEST(Fabric, LedgerCountsCallsPerMemberAndPayloadBytes) {
  Fabric fabric(3);
  Group g = fabric.new_group({0, 1, 2}, GroupKind::Tensor);
  run_ranks(3, [&](RankId r) {
    fabric.all_reduce(g, r, {1.0, 2.0, 3.0, 4.0}, Phase::Backward, StorageWidth::Half);
  });
  CommLedger ledger = fabric.ledger_snapshot();
  const LedgerEntry& e = ledger.at(Phase::Backward, GroupKind::Tensor, CollectiveOp::AllReduce);
  EXPECT_EQ(e.calls, 3u);            // one call per member
  EXPECT_EQ(e.payload_bytes, 24u);   // 3 members * 4 elements * 2 bytes
  EXPECT_EQ(e.metadata_bytes, 0u);
}

TEST(Fabric, LedgerAccountsVariableGatherMetadata) {
  Fabric fabric(3);
  Group g = fabric.new_group({0, 1, 2}, GroupKind::Tensor);
  run_ranks(3, [&](RankId r) {
    std::vector<double> local(static_cast<std::size_t>(r) + 1, 1.0);
    fabric.all_gather_v(g, r, local, Phase::Forward, StorageWidth::Half);
  });
  CommLedger ledger = fabric.ledger_snapshot();
  const LedgerEntry& e = ledger.at(Phase::Forward, GroupKind::Tensor, CollectiveOp::AllGather);
  EXPECT_EQ(e.calls, 3u);
  EXPECT_EQ(e.payload_bytes, (1u + 2u + 3u) * 2u);  // contributed elements once
  EXPECT_EQ(e.metadata_bytes, 3u * 8u);             // one length integer per member
}

TEST(Fabric, LedgerAccountsExchangeIncludingSelfSegment) {
  Fabric fabric(2);
  Group g = fabric.new_group({0, 1}, GroupKind::Expert);
  run_ranks(2, [&](RankId r) {
    std::vector<std::vector<double>> segs{{1.0}, {2.0, 3.0}};
    fabric.all_to_all_v(g, r, segs, Phase::Forward, StorageWidth::Half);
  });
  CommLedger ledger = fabric.ledger_snapshot();
  const LedgerEntry& e = ledger.at(Phase::Forward, GroupKind::Expert, CollectiveOp::AllToAll);
  EXPECT_EQ(e.calls, 2u);
  EXPECT_EQ(e.payload_bytes, 2u * 3u * 2u);  // both members ship 3 elements each
  EXPECT_EQ(e.metadata_bytes, 2u * 2u * 8u); // one count per peer per member
}

TEST(Fabric, SingletonGroupCollectivesAreLedgered) {
  Fabric fabric(2);
  Group g = fabric.new_group({1}, GroupKind::DataExp);
  std::vector<double> out;
  run_ranks(2, [&](RankId r) {
    if (r == 1) {
      out = fabric.all_reduce(g, r, {5.0, 6.0}, Phase::GradSync, StorageWidth::Half);
    }
  });
  EXPECT_EQ(out, (std::vector<double>{5.0, 6.0}));
  CommLedger ledger = fabric.ledger_snapshot();
  const LedgerEntry& e = ledger.at(Phase::GradSync, GroupKind::DataExp, CollectiveOp::AllReduce);
  EXPECT_EQ(e.calls, 1u);
  EXPECT_EQ(e.payload_bytes, 4u);
}

TEST(Fabric, ResetLedgerClearsAllEntries) {
  Fabric fabric(2);
  Group g = fabric.new_group({0, 1}, GroupKind::Tensor);
  run_ranks(2, [&](RankId r) {
    fabric.all_reduce(g, r, {1.0}, Phase::Forward, StorageWidth::Half);
  });
  EXPECT_GT(fabric.ledger_snapshot().grand_total().calls, 0u);
  fabric.reset_ledger();
  EXPECT_EQ(fabric.ledger_snapshot().grand_total().calls, 0u);
}

TEST(Fabric, NewGroupRejectsBadMemberLists) {
  Fabric fabric(2);
  EXPECT_THROW(fabric.new_group({0, 2}, GroupKind::Tensor), InvalidGroupError);
  EXPECT_THROW(fabric.new_group({0, 0}, GroupKind::Tensor), InvalidGroupError);
  EXPECT_THROW(fabric.new_group({}, GroupKind::Tensor), InvalidGroupError);
}

TEST(Fabric, PositionOfRejectsNonMembers) {
  Fabric fabric(4);
  Group g = fabric.new_group({1, 3}, GroupKind::Expert);
  EXPECT_EQ(g.position_of(1), 0);
  EXPECT_EQ(g.position_of(3), 1);
  EXPECT_THROW(g.position_of(2), ProtocolError);
}

TEST(Fabric, MissingMemberTimesOut) {
  Fabric fabric(2);
  fabric.set_collective_timeout(std::chrono::milliseconds(100));
  Group g = fabric.new_group({0, 1}, GroupKind::Tensor);
  std::atomic<bool> timed_out{false};
  run_ranks(2, [&](RankId r) {
    if (r == 1) {
      return;  // never shows up
    }
    try {
      fabric.all_reduce(g, r, {1.0}, Phase::Forward, StorageWidth::Half);
    } catch (const TimeoutError&) {
      timed_out = true;
    }
  });
  EXPECT_TRUE(timed_out);
}

}  // namespace
}  // namespace tedsim
