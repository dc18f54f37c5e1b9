// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tedsim/cost_model.hpp"
#include "tedsim/ledger.hpp"
#include "tedsim/moe.hpp"
#include "tedsim/optimizer.hpp"
#include "tedsim/topology.hpp"

namespace tedsim {

// Experiment front end: one flat config ingested from JSON or flags, runners
// for the four modes, and reports whose serialization is byte-stable so a
// repeated run can be diffed against its predecessor.

inline constexpr const char* kReportVersion = "tedsim-0.1.0";

enum class RunMode { Train, Verify, Plan, Ledger };

RunMode parse_run_mode(const std::string& name);
const char* to_string(RunMode mode);

struct RunConfig {
  int world_size = 1;
  int tensor_parallel = 1;
  int experts = 1;
  int layers = 1;
  int hidden = 8;
  int tokens_per_shard = 8;
  std::uint64_t seed = 1;
  int steps = 1;
  bool dtd = false;
  bool cac = false;
  bool ckpt = true;
  bool tiling = true;
  std::int64_t tile_size = TileConfig{}.tile_size;
  bool corrupt_drop = false;  // fault-injection hook for the verify mode
  RunMode mode = RunMode::Train;
};

// Parses a JSON object with any subset of the RunConfig fields; unknown keys
// are an error so typos fail loudly. Field names match the struct members.
RunConfig run_config_from_json(const std::string& text);

std::string to_json(const RunConfig& cfg);

// Projections onto the library configs.
MoeModelConfig model_of(const RunConfig& cfg);
TedConfig topology_of(const RunConfig& cfg);
TrainerOptions trainer_options_of(const RunConfig& cfg);

struct RunReport {
  std::string version = kReportVersion;
  RunConfig config;
  std::vector<double> losses;         // one per step
  CommLedger ledger;
  std::vector<MemoryReport> memory;   // one per rank

  std::string to_json() const;
};

// Runs `steps` full training iterations and collects the report.
RunReport run_training(const RunConfig& cfg);

// One named invariant check; `detail` carries the measured numbers either way.
struct VerifyCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct VerifySummary {
  std::vector<VerifyCheck> checks;

  bool all_pass() const;
  std::string to_text() const;  // one [PASS]/[FAIL] line per check
  std::string to_json() const;
};

// Runs the invariant suite for the given config plus a built-in sweep of
// small worlds: serial equivalence, flag-toggle stability, token placement,
// optimizer equivalences, and ledger-vs-prediction. A config with
// corrupt_drop set is expected to fail placement, and the summary says so.
VerifySummary run_verify(const RunConfig& cfg);

struct PlanRequest {
  double budget_bytes = kDefaultGpuBytes;
  int world_min = 32;
  int world_max = 512;  // swept by doubling
  PlanCaps caps;
};

std::vector<PlanResult> run_plan(const PlanRequest& request);

}  // namespace tedsim
