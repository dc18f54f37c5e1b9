// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the simulator's load-bearing guarantees. Each test
// prints one PASS/FAIL line so the suite doubles as a short report:
//
//   [CRITERION k] <what it guarantees>: PASS
//
// Criteria 1 and 2 pin the per-step collective schedule and the exchange
// volume reductions; 3 ties every small-world configuration to the serial
// reference; 4 covers the tiled sharded optimizer; 5 and 6 the memory
// accounting; 7 the closed-form traffic predictor; 8 the capacity planner.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tedsim/cost_model.hpp"
#include "tedsim/moe.hpp"
#include "tedsim/optimizer.hpp"
#include "tedsim/tensor.hpp"
#include "tedsim/topology.hpp"

namespace tedsim {
namespace {

class Criterion : public ::testing::Test {
 protected:
  void label(int number, const char* name) {
    number_ = number;
    name_ = name;
  }
  void TearDown() override {
    std::printf("[CRITERION %d] %s: %s\n", number_, name_, HasFailure() ? "FAIL" : "PASS");
    std::fflush(stdout);
  }

 private:
  int number_ = 0;
  const char* name_ = "";
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

MoeModelConfig make_model(int layers, int hidden, int experts, int tokens) {
  MoeModelConfig m;
  m.layers = layers;
  m.hidden = hidden;
  m.experts = experts;
  m.tokens_per_shard = tokens;
  m.seed = 11;
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  }
  return worst;
}

double max_map_diff(const std::map<std::string, Tensor>& a,
                    const std::map<std::string, Tensor>& b) {
  double worst = 0.0;
  for (const auto& [name, ta] : a) {
    worst = std::max(worst, max_abs_diff(ta, b.at(name)));
  }
  return worst;
}

struct RunOut {
  std::vector<double> losses;
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> grads;
  CommLedger ledger;
};

RunOut run_parallel(const MoeModelConfig& model, const TedConfig& topo, const RunFlags& flags,
                    int steps = 1) {
  TrainerOptions opts;
  opts.flags = flags;
  Trainer trainer(model, topo, opts);
  RunOut out;
  for (int s = 0; s < steps; ++s) {
    out.losses.push_back(trainer.step().loss);
  }
  out.params = trainer.full_parameters();
  out.grads = trainer.full_gradients();
  out.ledger = trainer.fabric().ledger_snapshot();
  return out;
}

LedgerEntry schedule_total(const CommLedger& ledger, CollectiveOp op) {
  return ledger.total(op, {Phase::Forward, Phase::Recompute, Phase::Backward});
}

struct Layout {
  int world, tensor, experts;
};

// Every factoring of the small worlds into tensor and expert degrees.
std::vector<Layout> small_world_layouts() {
  std::vector<Layout> out;
  for (int world : {1, 2, 4, 8}) {
    for (int tensor = 1; tensor <= world; tensor *= 2) {
      for (int experts : {1, 2, 4}) {
        if ((world / tensor) % experts == 0) {
          out.push_back({world, tensor, experts});
        }
      }
    }
  }
  return out;
}

// One expert-bearing layer runs six exchanges and six reduces per step with
// recompute on; replaying the stashed forward collectives drops both to four
// and removes exactly a third of every schedule byte.
TEST_F(Criterion, PerStepCollectiveCountsAndReplayReduction) {
  label(1, "per-step collective counts, and replay removing a third of the bytes");
  Timer timer;

  MoeModelConfig model = make_model(1, 8, 2, 8);
  TedConfig topo = derive_config(4, 2, 2);
  const std::uint64_t G = 4;

  RunFlags base;  // ckpt on, cac off
  RunOut plain = run_parallel(model, topo, base);
  EXPECT_EQ(schedule_total(plain.ledger, CollectiveOp::AllToAll).calls / G, 6u);
  EXPECT_EQ(schedule_total(plain.ledger, CollectiveOp::AllReduce).calls / G, 6u);

  RunFlags replay = base;
  replay.cac = true;
  RunOut stashed = run_parallel(model, topo, replay);
  EXPECT_EQ(schedule_total(stashed.ledger, CollectiveOp::AllToAll).calls / G, 4u);
  EXPECT_EQ(schedule_total(stashed.ledger, CollectiveOp::AllReduce).calls / G, 4u);

  auto schedule_bytes = [](const CommLedger& l) {
    return schedule_total(l, CollectiveOp::AllReduce).payload_bytes +
           schedule_total(l, CollectiveOp::AllToAll).payload_bytes +
           schedule_total(l, CollectiveOp::AllGather).payload_bytes;
  };
  // Exactly one third less: 3 * replayed == 2 * plain, in integers.
  EXPECT_EQ(3 * schedule_bytes(stashed.ledger), 2 * schedule_bytes(plain.ledger));

  EXPECT_LT(timer.seconds(), 1.0);
}

// Dropping duplicate tokens divides dispatch bytes by the tensor degree
// exactly, and the reassembly gathers appear as separate all-gather traffic.
TEST_F(Criterion, DuplicateDropDividesExchangeBytes) {
  label(2, "duplicate dropping divides exchange bytes by the tensor degree");
  Timer timer;

  for (int tensor : {2, 4}) {
    const int world = tensor * 2;
    MoeModelConfig model = make_model(1, 8, 2, 8);
    TedConfig topo = derive_config(world, tensor, 2);

    RunOut plain = run_parallel(model, topo, RunFlags{});
    RunFlags drop;
    drop.dtd = true;
    RunOut dropped = run_parallel(model, topo, drop);

    const LedgerEntry plain_a2a = schedule_total(plain.ledger, CollectiveOp::AllToAll);
    const LedgerEntry drop_a2a = schedule_total(dropped.ledger, CollectiveOp::AllToAll);
    EXPECT_EQ(drop_a2a.payload_bytes * static_cast<std::uint64_t>(tensor),
              plain_a2a.payload_bytes)
        << "tensor degree " << tensor;

    // Gather traffic is ledgered under its own op, never mixed into the
    // exchange figures.
    EXPECT_EQ(schedule_total(plain.ledger, CollectiveOp::AllGather).calls, 0u);
    EXPECT_GT(schedule_total(dropped.ledger, CollectiveOp::AllGather).calls, 0u);
    EXPECT_EQ(schedule_total(dropped.ledger, CollectiveOp::AllToAll).metadata_bytes,
              plain_a2a.metadata_bytes);
  }

  EXPECT_LT(timer.seconds(), 1.0);
}

// Every small-world configuration matches the serial reference, and each
// communication optimization changes nothing about the computed values.
TEST_F(Criterion, AllSmallWorldsMatchTheSerialReference) {
  label(3, "small-world sweep matches the serial reference, toggles change nothing");
  Timer timer;

  int configs = 0;
  for (const Layout& lay : small_world_layouts()) {
    for (int layers : {1, 2}) {
      for (int hidden : {8, 16}) {
        for (int tokens : {8, 16}) {
          MoeModelConfig model = make_model(layers, hidden, lay.experts, tokens);
          TedConfig topo = derive_config(lay.world, lay.tensor, lay.experts);
          const std::string tag = std::to_string(lay.world) + "/" + std::to_string(lay.tensor) +
                                  "/" + std::to_string(lay.experts) + " L" +
                                  std::to_string(layers) + " h" + std::to_string(hidden) + " n" +
                                  std::to_string(tokens);
          ++configs;

          RunFlags base;  // ckpt on, everything else off
          RunOut par = run_parallel(model, topo, base);

          TrainerOptions sopts;
          sopts.flags = base;
          SerialModel serial(model, topo.experts * topo.expert_data_parallel, sopts);
          StepReport sr = serial.step();
          EXPECT_NEAR(par.losses[0], sr.loss, 1e-9) << tag;
          for (const Parameter& p : serial.params()) {
            EXPECT_LE(max_abs_diff(par.grads.at(p.desc.name), p.grad), 1e-9)
                << tag << " grad " << p.desc.name;
            EXPECT_LE(max_abs_diff(par.params.at(p.desc.name), p.value), 1e-9)
                << tag << " param " << p.desc.name;
          }

          for (const char* toggle : {"dtd", "cac", "ckpt"}) {
            RunFlags flags = base;
            if (toggle == std::string("dtd")) flags.dtd = true;
            if (toggle == std::string("cac")) flags.cac = true;
            if (toggle == std::string("ckpt")) flags.ckpt = false;
            RunOut other = run_parallel(model, topo, flags);
            EXPECT_LE(std::abs(other.losses[0] - par.losses[0]), 1e-12) << tag << " " << toggle;
            EXPECT_LE(max_map_diff(other.params, par.params), 1e-12) << tag << " " << toggle;
          }
        }
      }
    }
  }
  EXPECT_EQ(configs, 19 * 8);

  EXPECT_LT(timer.seconds(), 60.0);
}

// The tiled sharded optimizer is bitwise equal to the untiled replicated one
// at every tile size, and its transient up-cast stays within one tile.
TEST_F(Criterion, TiledShardedOptimizerIsExact) {
  label(4, "tiled sharded optimizer updates are bitwise exact, bounded transients");
  Timer timer;

  const std::int64_t n = 4099;
  std::vector<double> values = seeded_init({n}, 71, 0.5).data;
  TileConfig off;
  off.enabled = false;
  OptimizerShard untiled = OptimizerShard::create(values, 1, 0, AdamConfig{}, off);
  std::vector<double> out_ref(n, 0.0);
  for (std::int64_t tile_size : {std::int64_t{1}, std::int64_t{7}, std::int64_t{1'800'000}}) {
    TileConfig tiles;
    tiles.tile_size = tile_size;
    OptimizerShard tiled = OptimizerShard::create(values, 1, 0, AdamConfig{}, tiles);
    OptimizerShard fresh = OptimizerShard::create(values, 1, 0, AdamConfig{}, off);
    std::vector<double> out_tiled(n, 0.0);
    for (int step = 0; step < 2; ++step) {
      std::vector<double> grad = seeded_init({n}, 80 + step, 0.5).data;
      fresh.step_owned(grad, out_ref);
      tiled.step_owned(grad, out_tiled);
    }
    EXPECT_EQ(out_tiled, out_ref) << "tile " << tile_size;
    // Transient bound: one up-cast tile plus small change.
    EXPECT_LE(tiled.upcast_peak_bytes,
              4u * static_cast<std::uint64_t>(tile_size) + 1024u);
  }

  // Five million elements walk in three default tiles of exactly 7.2 MB.
  {
    std::vector<double> big(5'000'000, 0.25);
    std::vector<double> grad(5'000'000, 0.5);
    std::vector<double> out;
    OptimizerShard opt = OptimizerShard::create(big, 1, 0, AdamConfig{}, TileConfig{});
    opt.step_owned(grad, out);
    EXPECT_EQ(opt.upcast_peak_bytes, 7'200'000u);
  }

  // Sharding the state across the data group and completing updates with the
  // gather changes no parameter bit.
  MoeModelConfig model = make_model(2, 8, 2, 8);
  TedConfig topo = derive_config(8, 2, 2);
  TrainerOptions sharded;
  TrainerOptions replicated;
  replicated.shard_optimizer = false;
  Trainer a(model, topo, sharded);
  Trainer b(model, topo, replicated);
  for (int s = 0; s < 2; ++s) {
    EXPECT_EQ(a.step().loss, b.step().loss);
  }
  EXPECT_EQ(max_map_diff(a.full_parameters(), b.full_parameters()), 0.0);

  EXPECT_LT(timer.seconds(), 5.0);
}

// The per-rank memory breakdown and its closed form agree with each other
// and with the bytes the simulated trainer actually accounts.
TEST_F(Criterion, MemoryModelMatchesTheSimulatedBytes) {
  label(5, "memory model closed form matches the simulated per-rank bytes");
  Timer timer;

  std::mt19937_64 rng(515);
  std::uniform_real_distribution<double> base_dist(1e8, 2e10);
  std::uniform_int_distribution<int> e_pow(0, 7);
  std::uniform_int_distribution<int> t_pick(1, 8);
  std::uniform_int_distribution<int> d_pick(1, 16);
  for (int i = 0; i < 1000; ++i) {
    const double base = base_dist(rng);
    const int experts = 1 << e_pow(rng);
    const int tensor = t_pick(rng);
    const int world = tensor * experts * d_pick(rng);
    MemoryEstimate est = memory_lower_bound(base, experts, tensor, world);
    EXPECT_LE(std::abs((est.term_nonexpert + est.term_expert) - est.bytes), 1e-12 * est.bytes);
  }

  // Without tensor sharding the bound is the plain data-parallel form.
  MemoryEstimate flat = memory_lower_bound(5e9, 8, 1, 64);
  EXPECT_DOUBLE_EQ(flat.bytes, 4.0 * 5e9 * (1.0 + 10.0 / 64.0));

  // Inverting the bound at a 16 GB budget: sharding to degree 6 admits a
  // 24e9 base in the large-machine limit, six times the unsharded 4e9.
  EXPECT_DOUBLE_EQ(max_base_params_limit(16e9, 1), 4e9);
  EXPECT_DOUBLE_EQ(max_base_params_limit(16e9, 6), 24e9);
  EXPECT_DOUBLE_EQ(max_base_params_limit(16e9, 6), 6.0 * max_base_params_limit(16e9, 1));

  // The integer accounting agrees with what the trainer reports, byte for
  // byte, sharded or not.
  for (bool shard : {true, false}) {
    MoeModelConfig model = make_model(2, 8, 2, 8);
    TedConfig topo = derive_config(8, 2, 2);
    TrainerOptions opts;
    opts.shard_optimizer = shard;
    Trainer trainer(model, topo, opts);
    trainer.step();
    for (RankId r = 0; r < topo.world_size; ++r) {
      ModelStateBytes want = model_state_bytes(model, topo, r, shard);
      MemoryReport got = trainer.memory_report(r);
      EXPECT_EQ(want.params, got.params_bytes);
      EXPECT_EQ(want.grads, got.grads_bytes);
      EXPECT_EQ(want.optimizer, got.optimizer_state_bytes);
    }
  }

  EXPECT_LT(timer.seconds(), 1.0);
}

// Expert-augmented parameter totals land on the published figures.
TEST_F(Criterion, ParameterTotalsMatchKnownConfigurations) {
  label(6, "parameter totals for known configurations land within one percent");
  EXPECT_NEAR(total_param_share(6.7e9, 16), 40e9, 0.01 * 40e9);
  EXPECT_NEAR(total_param_share(1.3e9, 4), 2.6e9, 0.01 * 2.6e9);
}

// The closed-form traffic predictor reproduces the measured ledger byte for
// byte across the whole small-world sweep and every flag combination.
TEST_F(Criterion, PredictedTrafficEqualsMeasuredTraffic) {
  label(7, "predicted communication equals the measured ledger byte for byte");
  Timer timer;

  int checked = 0, mismatched = 0;
  for (const Layout& lay : small_world_layouts()) {
    for (int layers : {1, 2}) {
      for (int hidden : {8, 16}) {
        for (int tokens : {8, 16}) {
          MoeModelConfig model = make_model(layers, hidden, lay.experts, tokens);
          TedConfig topo = derive_config(lay.world, lay.tensor, lay.experts);
          for (int mask = 0; mask < 8; ++mask) {
            RunFlags flags;
            flags.ckpt = (mask & 1) != 0;
            flags.cac = (mask & 2) != 0;
            flags.dtd = (mask & 4) != 0;
            TrainerOptions opts;
            opts.flags = flags;
            Trainer trainer(model, topo, opts);
            trainer.step();
            CommLedger predicted = predict_comm_volume(model, topo, flags, 1, true);
            ++checked;
            if (!(predicted == trainer.fabric().ledger_snapshot())) {
              ++mismatched;
              ADD_FAILURE() << "ledger mismatch at " << lay.world << "/" << lay.tensor << "/"
                            << lay.experts << " L" << layers << " h" << hidden << " n" << tokens
                            << " flags ckpt=" << flags.ckpt << " cac=" << flags.cac
                            << " dtd=" << flags.dtd;
            }
          }
        }
      }
    }
  }
  EXPECT_EQ(checked, 19 * 8 * 8);
  EXPECT_EQ(mismatched, 0);

  EXPECT_LT(timer.seconds(), 60.0);
}

// Scaling the machine never shrinks the largest-base advantage the planner
// attributes to tensor sharding.
TEST_F(Criterion, PlannerAdvantageGrowsWithTheMachine) {
  label(8, "planner base-size advantage is nondecreasing in machine size");
  Timer timer;

  double prev = 0.0;
  for (int world : {32, 64, 128, 256, 512}) {
    PlanResult r = plan_largest_model(kDefaultGpuBytes, world);
    ASSERT_TRUE(r.ted.base_at_min_experts.feasible);
    ASSERT_TRUE(r.baseline.base_at_min_experts.feasible);
    EXPECT_GE(r.base_ratio, prev) << "world " << world;
    EXPECT_GE(r.base_ratio, 1.0) << "world " << world;
    prev = r.base_ratio;
  }
  EXPECT_NEAR(prev, 13.0 / 2.7, 1e-9);

  EXPECT_LT(timer.seconds(), 1.0);
}

}  // namespace
}  // namespace tedsim
