// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tedsim/ledger.hpp"
#include "tedsim/moe.hpp"
#include "tedsim/topology.hpp"

namespace tedsim {

// Closed-form counterparts of what the simulator measures: exact per-rank
// parameter and byte counts for a concrete model, continuous-parameter memory
// bounds for capacity planning, and a communication-volume predictor that must
// reproduce the fabric ledger byte for byte.

// ---------------------------------------------------------------------------
// Exact element counts for a concrete model on a concrete topology.

// Per-rank parameter element counts, split by sharding family.
struct LocalParamCounts {
  std::uint64_t block = 0;      // one tensor-sharded feed-forward block
  std::uint64_t nonexpert = 0;  // attention blocks, dense blocks, gate weights
  std::uint64_t expert = 0;     // the one expert housed by this rank

  std::uint64_t total() const { return nonexpert + expert; }
};

LocalParamCounts local_param_counts(const MoeModelConfig& model, const TedConfig& cfg);

// Element count of the full unsharded model.
std::uint64_t full_param_count(const MoeModelConfig& model);

// Persistent model-state bytes for one rank: 2-byte parameters and gradients
// over the local shard, 12 bytes per optimizer-owned element (4-byte master
// value plus two 4-byte moments). Owned ranges follow the optimizer's
// near-equal split over the rank's data-parallel groups; with sharding
// disabled every rank owns both families whole.
struct ModelStateBytes {
  std::uint64_t params = 0;
  std::uint64_t grads = 0;
  std::uint64_t optimizer = 0;

  std::uint64_t total() const { return params + grads + optimizer; }
};

ModelStateBytes model_state_bytes(const MoeModelConfig& model, const TedConfig& cfg, RankId rank,
                                  bool shard_optimizer = true);

// ---------------------------------------------------------------------------
// Continuous planning model. Parameter counts are doubles here: these forms
// answer sizing questions ("what fits in 16 GB?") where base-model sizes are
// quoted in billions, not derived from a concrete layer stack.

// A base model of NP parameters grown to E experts keeps 2/3 of its
// parameters shared and replaces the remaining third with E expert copies.
double expert_param_share(double base_params, int experts);     // E/3 of the base
double nonexpert_param_share(double base_params);               // 2/3 of the base
double total_param_share(double base_params, int experts);      // (E+2)/3 of the base

// Per-GPU model-state lower bound. `term_*` is the two-family breakdown
// (parameters and gradients sharded over the tensor group, optimizer states
// additionally over the matching data group); `bytes` is the single-fraction
// form 4 * NP * (1/T + (E+2)/G). The two agree to rounding error; both are
// returned so callers can cross-check.
struct MemoryEstimate {
  double term_nonexpert = 0.0;
  double term_expert = 0.0;
  double bytes = 0.0;
};

MemoryEstimate memory_lower_bound(double base_params, int experts, int tensor_parallel,
                                  int world_size);

// Largest base model whose bound fits the per-GPU budget, and its limit as
// the machine grows (budget * T / 4, the data-parallel terms vanishing).
double max_base_params(double budget_bytes, int experts, int tensor_parallel, int world_size);
double max_base_params_limit(double budget_bytes, int tensor_parallel);

// The two data-parallel degrees are tied: growing the expert count shrinks
// the groups that shard expert optimizer state. Throws InvalidConfigError
// when the division is not exact.
int expert_data_degree(int nonexpert_data_degree, int experts);

// ---------------------------------------------------------------------------
// Capacity planner: pick the largest trainable model on a given machine.

struct PlanCaps {
  int tensor_max = 6;     // tensor degree stays inside one node
  int experts_max = 128;
};

// Base-model sizes the planner may choose from (parameters).
const std::vector<double>& default_base_candidates();

inline constexpr double kDefaultGpuBytes = 16e9;

// One admissible configuration: a base size plus the degrees that fit it.
struct PlanChoice {
  bool feasible = false;
  int tensor_parallel = 1;
  int experts = 0;
  double base_params = 0.0;
  double total_params = 0.0;
  double bound_bytes = 0.0;
};

// Planner output for one framework. `best` maximizes total model size over
// every admissible (base, tensor, experts) combination; `base_at_min_experts`
// maximizes the base size alone with the expert count pinned to the smallest
// admissible value, the comparison that isolates how far tensor sharding
// stretches the dense trunk.
struct PlanSide {
  PlanChoice best;
  PlanChoice base_at_min_experts;
};

struct PlanResult {
  int world_size = 0;
  double budget_bytes = 0.0;
  PlanSide ted;       // tensor degree free up to caps.tensor_max
  PlanSide baseline;  // tensor degree pinned to 1
  double total_ratio = 0.0;  // ted best total / baseline best total
  double base_ratio = 0.0;   // ted base / baseline base, at minimum experts
};

PlanResult plan_largest_model(double budget_bytes, int world_size, PlanCaps caps = {},
                              const std::vector<double>& base_candidates =
                                  default_base_candidates());

// Table export, one row per (world size, framework). The ratio column
// carries base_ratio: the total-size ratio whipsaws with the expert grid as
// the machine grows, while the base-size ratio is the quantity that climbs
// monotonically, so it is the one worth scanning down the table.
std::string plan_table_csv(const std::vector<PlanResult>& rows);
std::string plan_table_json(const std::vector<PlanResult>& rows);

// ---------------------------------------------------------------------------
// Communication predictor. Returns the ledger a training run of `steps`
// steps must produce, from closed forms only; the fabric's measured ledger
// has to match it exactly, calls, payload and metadata alike.

CommLedger predict_comm_volume(const MoeModelConfig& model, const TedConfig& cfg,
                               const RunFlags& flags, int steps = 1,
                               bool shard_optimizer = true);

}  // namespace tedsim
