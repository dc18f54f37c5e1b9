// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

#include "tedsim/optimizer.hpp"

namespace tedsim {

namespace {

// Index of `rank` within its group in `families`, or -1 when absent.
int position_in(const std::vector<std::vector<RankId>>& families, RankId rank) {
  for (const std::vector<RankId>& members : families) {
    auto it = std::find(members.begin(), members.end(), rank);
    if (it != members.end()) return static_cast<int>(it - members.begin());
  }
  return -1;
}

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace

// ---------------------------------------------------------------------------
// Exact element counts

LocalParamCounts local_param_counts(const MoeModelConfig& model, const TedConfig& cfg) {
  validate_model(model);
  if (model.experts != cfg.experts) {
    throw InvalidConfigError("model declares " + std::to_string(model.experts) +
                             " experts but the topology provides " +
                             std::to_string(cfg.experts));
  }
  const std::uint64_t h = static_cast<std::uint64_t>(model.hidden);
  const std::uint64_t t = static_cast<std::uint64_t>(cfg.tensor_parallel);
  if ((4 * h) % t != 0) {
    throw InvalidConfigError("inner width " + std::to_string(4 * h) +
                             " is not divisible by tensor degree " + std::to_string(t));
  }
  const std::uint64_t layers = static_cast<std::uint64_t>(model.layers);
  const std::uint64_t moe_layers = static_cast<std::uint64_t>(moe_layer_count(model.layers));
  const std::uint64_t inner = 4 * h / t;  // per-rank slice of the 4h inner width

  LocalParamCounts c;
  // One block: in-projection [h, 4h] and bias [4h] split along the inner
  // axis, out-projection [4h, h] split along rows, out bias [h] replicated.
  c.block = h * inner + inner + inner * h + h;
  const std::uint64_t dense_blocks = 2 * layers - moe_layers;  // attn everywhere, ffn on odd layers
  c.nonexpert = dense_blocks * c.block +
                moe_layers * h * static_cast<std::uint64_t>(model.experts);
  c.expert = moe_layers * c.block;
  return c;
}

std::uint64_t full_param_count(const MoeModelConfig& model) {
  validate_model(model);
  const std::uint64_t h = static_cast<std::uint64_t>(model.hidden);
  const std::uint64_t e = static_cast<std::uint64_t>(model.experts);
  const std::uint64_t layers = static_cast<std::uint64_t>(model.layers);
  const std::uint64_t moe_layers = static_cast<std::uint64_t>(moe_layer_count(model.layers));
  const std::uint64_t block = 8 * h * h + 5 * h;
  return (2 * layers - moe_layers) * block + moe_layers * h * e + moe_layers * e * block;
}

ModelStateBytes model_state_bytes(const MoeModelConfig& model, const TedConfig& cfg, RankId rank,
                                  bool shard_optimizer) {
  const TedConfig full = derive_config(cfg.world_size, cfg.tensor_parallel, cfg.experts);
  if (rank < 0 || rank >= full.world_size) {
    throw InvalidConfigError("rank " + std::to_string(rank) + " outside world of size " +
                             std::to_string(full.world_size));
  }
  const LocalParamCounts counts = local_param_counts(model, full);

  ModelStateBytes out;
  out.params = 2 * counts.total();
  out.grads = 2 * counts.total();

  std::uint64_t owned_nonexp = counts.nonexpert;
  std::uint64_t owned_exp = counts.expert;
  if (shard_optimizer) {
    const TopologyGroups groups = build_groups(full);
    const int pos_ne = position_in(groups.nonexp_data_groups, rank);
    const int pos_exp = position_in(groups.exp_data_groups, rank);
    owned_nonexp = static_cast<std::uint64_t>(
        shard_range(static_cast<std::int64_t>(counts.nonexpert),
                    full.nonexpert_data_parallel, pos_ne)
            .size());
    owned_exp = static_cast<std::uint64_t>(
        shard_range(static_cast<std::int64_t>(counts.expert), full.expert_data_parallel, pos_exp)
            .size());
  }
  out.optimizer = 12 * (owned_nonexp + owned_exp);
  return out;
}

// ---------------------------------------------------------------------------
// Continuous planning model

namespace {

void check_model_spec(double base_params, int experts) {
  if (!(base_params > 0.0)) {
    throw InvalidConfigError("base parameter count must be positive");
  }
  if (experts < 1) {
    throw InvalidConfigError("expert count must be at least 1, got " + std::to_string(experts));
  }
}

}  // namespace

double expert_param_share(double base_params, int experts) {
  check_model_spec(base_params, experts);
  return base_params * static_cast<double>(experts) / 3.0;
}

double nonexpert_param_share(double base_params) {
  check_model_spec(base_params, 1);
  return base_params * 2.0 / 3.0;
}

double total_param_share(double base_params, int experts) {
  check_model_spec(base_params, experts);
  return base_params * static_cast<double>(experts + 2) / 3.0;
}

MemoryEstimate memory_lower_bound(double base_params, int experts, int tensor_parallel,
                                  int world_size) {
  check_model_spec(base_params, experts);
  if (tensor_parallel < 1 || world_size < 1) {
    throw InvalidConfigError("parallel degrees must be at least 1");
  }
  const double t = static_cast<double>(tensor_parallel);
  const double g = static_cast<double>(world_size);
  const double nonexp = nonexpert_param_share(base_params);
  const double exp = expert_param_share(base_params, experts);

  MemoryEstimate est;
  // Parameters and gradients (2 bytes each) shard over the tensor group; the
  // expert third additionally spreads one expert per rank. Optimizer states
  // (12 bytes) shard over the matching data group on top, and in both
  // families the group product telescopes to the whole machine.
  est.term_nonexpert = 4.0 * nonexp / t + 12.0 * nonexp / g;
  est.term_expert = 4.0 * exp / (t * static_cast<double>(experts)) + 12.0 * exp / g;
  est.bytes = 4.0 * base_params * (1.0 / t + static_cast<double>(experts + 2) / g);
  return est;
}

double max_base_params(double budget_bytes, int experts, int tensor_parallel, int world_size) {
  if (!(budget_bytes > 0.0)) throw InvalidConfigError("memory budget must be positive");
  if (experts < 1 || tensor_parallel < 1 || world_size < 1) {
    throw InvalidConfigError("parallel degrees must be at least 1");
  }
  const double denom = 4.0 * (1.0 / static_cast<double>(tensor_parallel) +
                              static_cast<double>(experts + 2) / static_cast<double>(world_size));
  return budget_bytes / denom;
}

double max_base_params_limit(double budget_bytes, int tensor_parallel) {
  if (!(budget_bytes > 0.0)) throw InvalidConfigError("memory budget must be positive");
  if (tensor_parallel < 1) throw InvalidConfigError("tensor degree must be at least 1");
  return budget_bytes * static_cast<double>(tensor_parallel) / 4.0;
}

int expert_data_degree(int nonexpert_data_degree, int experts) {
  if (nonexpert_data_degree < 1 || experts < 1) {
    throw InvalidConfigError("parallel degrees must be at least 1");
  }
  if (nonexpert_data_degree % experts != 0) {
    throw InvalidConfigError("data-parallel degree " + std::to_string(nonexpert_data_degree) +
                             " is not divisible by the expert count " + std::to_string(experts));
  }
  return nonexpert_data_degree / experts;
}

// ---------------------------------------------------------------------------
// Capacity planner

const std::vector<double>& default_base_candidates() {
  static const std::vector<double> sizes = {1.3e9, 2.7e9, 6.7e9, 13.0e9};
  return sizes;
}

namespace {

constexpr int kPlanExpertsMin = 4;

// Strict preference order between feasible choices: larger total model first,
// then the cheaper bound, then fewer tensor ranks, then fewer experts. Total
// ties happen whenever two tensor degrees fit the same (base, experts) pair.
bool plan_better(const PlanChoice& a, const PlanChoice& b) {
  if (!b.feasible) return a.feasible;
  if (!a.feasible) return false;
  if (a.total_params != b.total_params) return a.total_params > b.total_params;
  if (a.bound_bytes != b.bound_bytes) return a.bound_bytes < b.bound_bytes;
  if (a.tensor_parallel != b.tensor_parallel) return a.tensor_parallel < b.tensor_parallel;
  return a.experts < b.experts;
}

bool base_better(const PlanChoice& a, const PlanChoice& b) {
  if (!b.feasible) return a.feasible;
  if (!a.feasible) return false;
  if (a.base_params != b.base_params) return a.base_params > b.base_params;
  if (a.bound_bytes != b.bound_bytes) return a.bound_bytes < b.bound_bytes;
  return a.tensor_parallel < b.tensor_parallel;
}

PlanSide plan_side(double budget_bytes, int world, int tensor_cap, int experts_cap,
                   const std::vector<double>& candidates) {
  PlanSide side;
  int min_experts = 0;  // smallest expert count any admissible layout allows
  for (int t = 1; t <= std::min(tensor_cap, world); ++t) {
    if (world % t != 0) continue;
    const int replicas = world / t;
    for (int e = kPlanExpertsMin; e <= experts_cap; e *= 2) {
      if (replicas % e != 0) continue;
      if (min_experts == 0 || e < min_experts) min_experts = e;
      for (double base : candidates) {
        const MemoryEstimate est = memory_lower_bound(base, e, t, world);
        if (est.bytes > budget_bytes) continue;
        PlanChoice choice;
        choice.feasible = true;
        choice.tensor_parallel = t;
        choice.experts = e;
        choice.base_params = base;
        choice.total_params = total_param_share(base, e);
        choice.bound_bytes = est.bytes;
        if (plan_better(choice, side.best)) side.best = choice;
        if (e == min_experts && base_better(choice, side.base_at_min_experts)) {
          side.base_at_min_experts = choice;
        }
      }
    }
  }
  // The expert grid is scanned in ascending order per tensor degree, but a
  // later tensor degree can expose a smaller admissible expert count; rebuild
  // the pinned-expert choice in that case.
  if (side.base_at_min_experts.feasible &&
      side.base_at_min_experts.experts != min_experts) {
    side.base_at_min_experts = PlanChoice{};
    for (int t = 1; t <= std::min(tensor_cap, world); ++t) {
      if (world % t != 0 || (world / t) % min_experts != 0) continue;
      for (double base : candidates) {
        const MemoryEstimate est = memory_lower_bound(base, min_experts, t, world);
        if (est.bytes > budget_bytes) continue;
        PlanChoice choice;
        choice.feasible = true;
        choice.tensor_parallel = t;
        choice.experts = min_experts;
        choice.base_params = base;
        choice.total_params = total_param_share(base, min_experts);
        choice.bound_bytes = est.bytes;
        if (base_better(choice, side.base_at_min_experts)) side.base_at_min_experts = choice;
      }
    }
  }
  return side;
}

}  // namespace

PlanResult plan_largest_model(double budget_bytes, int world_size, PlanCaps caps,
                              const std::vector<double>& base_candidates) {
  if (!(budget_bytes > 0.0)) throw InvalidConfigError("memory budget must be positive");
  if (world_size < 1) throw InvalidConfigError("world size must be at least 1");
  if (caps.tensor_max < 1 || caps.experts_max < kPlanExpertsMin) {
    throw InvalidConfigError("planner caps must allow at least one layout");
  }
  if (base_candidates.empty()) {
    throw InvalidConfigError("planner needs at least one base-model candidate");
  }

  PlanResult result;
  result.world_size = world_size;
  result.budget_bytes = budget_bytes;
  result.ted = plan_side(budget_bytes, world_size, caps.tensor_max, caps.experts_max,
                         base_candidates);
  result.baseline = plan_side(budget_bytes, world_size, 1, caps.experts_max, base_candidates);
  if (result.ted.best.feasible && result.baseline.best.feasible) {
    result.total_ratio = result.ted.best.total_params / result.baseline.best.total_params;
  }
  if (result.ted.base_at_min_experts.feasible && result.baseline.base_at_min_experts.feasible) {
    result.base_ratio = result.ted.base_at_min_experts.base_params /
                        result.baseline.base_at_min_experts.base_params;
  }
  return result;
}

namespace {

void append_plan_row_csv(std::ostringstream& os, const PlanResult& r, const char* framework,
                         const PlanChoice& c) {
  os << r.world_size << "," << framework << "," << c.tensor_parallel << "," << c.experts << ","
     << c.base_params << "," << c.total_params << "," << c.bound_bytes << "," << r.base_ratio
     << "\n";
}

void append_plan_row_json(std::ostringstream& os, const PlanResult& r, const char* framework,
                          const PlanChoice& c, bool& first) {
  if (!first) os << ",";
  first = false;
  os << "{\"world_size\":" << r.world_size << ",\"framework\":\"" << framework
     << "\",\"tensor_parallel\":" << c.tensor_parallel << ",\"experts\":" << c.experts
     << ",\"base_params\":" << c.base_params << ",\"total_params\":" << c.total_params
     << ",\"bound_bytes\":" << c.bound_bytes << ",\"ratio\":" << r.base_ratio << "}";
}

}  // namespace

std::string plan_table_csv(const std::vector<PlanResult>& rows) {
  std::ostringstream os;
  os << std::setprecision(12);
  os << "world_size,framework,tensor_parallel,experts,base_params,total_params,bound_bytes,"
        "ratio\n";
  for (const PlanResult& r : rows) {
    append_plan_row_csv(os, r, "ted", r.ted.best);
    append_plan_row_csv(os, r, "baseline", r.baseline.best);
  }
  return os.str();
}

std::string plan_table_json(const std::vector<PlanResult>& rows) {
  std::ostringstream os;
  os << std::setprecision(15);
  os << "[";
  bool first = true;
  for (const PlanResult& r : rows) {
    append_plan_row_json(os, r, "ted", r.ted.best, first);
    append_plan_row_json(os, r, "baseline", r.baseline.best, first);
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Communication predictor

CommLedger predict_comm_volume(const MoeModelConfig& model, const TedConfig& cfg,
                               const RunFlags& flags, int steps, bool shard_optimizer) {
  const TedConfig full = derive_config(cfg.world_size, cfg.tensor_parallel, cfg.experts);
  const LocalParamCounts counts = local_param_counts(model, full);
  if (steps < 0) throw InvalidConfigError("step count must be nonnegative");

  const std::uint64_t g = static_cast<std::uint64_t>(full.world_size);
  const std::uint64_t t = static_cast<std::uint64_t>(full.tensor_parallel);
  const std::uint64_t e = static_cast<std::uint64_t>(full.experts);
  const std::uint64_t layers = static_cast<std::uint64_t>(model.layers);
  const std::uint64_t moe_layers = static_cast<std::uint64_t>(moe_layer_count(model.layers));
  const std::uint64_t n = static_cast<std::uint64_t>(model.tokens_per_shard);
  const std::uint64_t h = static_cast<std::uint64_t>(model.hidden);
  const std::uint64_t s = static_cast<std::uint64_t>(steps);

  const bool drop = flags.dtd && t > 1;
  if (flags.dtd && n % t != 0) {
    throw InvalidConfigError("token drop needs the per-shard token count " + std::to_string(n) +
                             " divisible by the tensor degree " + std::to_string(t));
  }
  const std::uint64_t n_sent = drop ? n / t : n;

  CommLedger ledger;
  // One model pass. Every layer runs two tensor all-reduces (one per block
  // boundary); every expert-bearing layer runs the dispatch and return
  // all-to-alls, plus two ragged all-gathers over the tensor group when
  // dropped tokens have to be reassembled. All aggregate payloads are
  // routing-independent: each replica redistributes exactly its own tokens.
  const auto add_pass = [&](Phase phase) {
    if (t > 1) {
      ledger.record(phase, GroupKind::Tensor, CollectiveOp::AllReduce, s * 2 * layers * g,
                    s * 2 * layers * g * n * h * 2, 0);
    }
    if (e > 1) {
      ledger.record(phase, GroupKind::Expert, CollectiveOp::AllToAll, s * 2 * moe_layers * g,
                    s * 2 * moe_layers * g * n_sent * h * 2, s * 2 * moe_layers * g * e * 8);
    }
    if (drop) {
      ledger.record(phase, GroupKind::Tensor, CollectiveOp::AllGather, s * 2 * moe_layers * g,
                    s * 2 * moe_layers * (g / t) * n * h * 2, s * 2 * moe_layers * g * 8);
    }
  };

  add_pass(Phase::Forward);
  if (flags.ckpt && !flags.cac) add_pass(Phase::Recompute);
  add_pass(Phase::Backward);

  const std::uint64_t data_nonexp = static_cast<std::uint64_t>(full.nonexpert_data_parallel);
  const std::uint64_t data_exp = static_cast<std::uint64_t>(full.expert_data_parallel);
  if (data_nonexp > 1) {
    ledger.record(Phase::GradSync, GroupKind::DataNonexp, CollectiveOp::AllReduce, s * g,
                  s * g * counts.nonexpert * 2, 0);
  }
  if (data_exp > 1) {
    ledger.record(Phase::GradSync, GroupKind::DataExp, CollectiveOp::AllReduce, s * g,
                  s * g * counts.expert * 2, 0);
  }
  if (shard_optimizer) {
    // The completion all-gather pads every shard to the longest one, and the
    // padding is accounted like real payload.
    if (data_nonexp > 1) {
      ledger.record(Phase::Optim, GroupKind::DataNonexp, CollectiveOp::AllGather, s * g,
                    s * g * ceil_div(counts.nonexpert, data_nonexp) * 2, 0);
    }
    if (data_exp > 1) {
      ledger.record(Phase::Optim, GroupKind::DataExp, CollectiveOp::AllGather, s * g,
                    s * g * ceil_div(counts.expert, data_exp) * 2, 0);
    }
  }
  return ledger;
}

}  // namespace tedsim
