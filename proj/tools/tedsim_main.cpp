// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "tedsim/harness.hpp"

namespace {

using tedsim::RunConfig;
using tedsim::RunMode;

// Option handles for the shared run flags, so a flag the user never typed
// cannot clobber a value that came from the JSON config.
struct RunOptions {
  RunConfig v;
  CLI::Option* world = nullptr;
  CLI::Option* tensor = nullptr;
  CLI::Option* experts = nullptr;
  CLI::Option* layers = nullptr;
  CLI::Option* hidden = nullptr;
  CLI::Option* tokens = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* steps = nullptr;
  CLI::Option* dtd = nullptr;
  CLI::Option* cac = nullptr;
  CLI::Option* ckpt = nullptr;
  CLI::Option* tiling = nullptr;
  CLI::Option* tile_size = nullptr;
  CLI::Option* corrupt = nullptr;
};

void add_run_options(CLI::App& app, RunOptions& o) {
  o.world = app.add_option("--world-size", o.v.world_size, "Total rank count");
  o.tensor = app.add_option("--tensor-parallel", o.v.tensor_parallel, "Tensor-parallel degree");
  o.experts = app.add_option("--experts", o.v.experts,
                             "Expert count, which is also the expert-parallel degree");
  o.layers = app.add_option("--layers", o.v.layers,
                            "Layer count; even-indexed layers route through experts");
  o.hidden = app.add_option("--hidden", o.v.hidden, "Hidden width");
  o.tokens = app.add_option("--tokens", o.v.tokens_per_shard, "Tokens per data shard");
  o.seed = app.add_option("--seed", o.v.seed, "Parameter and batch seed");
  o.steps = app.add_option("--steps", o.v.steps, "Training steps to run");
  o.dtd = app.add_flag("--dtd,!--no-dtd", o.v.dtd,
                       "Drop duplicate tokens before the all-to-all, regather after");
  o.cac = app.add_flag("--cac,!--no-cac", o.v.cac,
                       "Stash forward collectives and replay them during recompute");
  o.ckpt = app.add_flag("--ckpt,!--no-ckpt", o.v.ckpt,
                        "Recompute activations during the backward pass");
  o.tiling = app.add_flag("--tiling,!--no-tiling", o.v.tiling,
                          "Process the optimizer shard in fixed-size tiles");
  o.tile_size = app.add_option("--tile-size", o.v.tile_size, "Optimizer tile size in parameters");
  o.corrupt = app.add_flag("--corrupt-drop", o.v.corrupt_drop);
  o.corrupt->group("");  // fault-injection hook, hidden from help
}

void apply_overrides(const RunOptions& o, RunConfig& cfg) {
  if (o.world->count()) cfg.world_size = o.v.world_size;
  if (o.tensor->count()) cfg.tensor_parallel = o.v.tensor_parallel;
  if (o.experts->count()) cfg.experts = o.v.experts;
  if (o.layers->count()) cfg.layers = o.v.layers;
  if (o.hidden->count()) cfg.hidden = o.v.hidden;
  if (o.tokens->count()) cfg.tokens_per_shard = o.v.tokens_per_shard;
  if (o.seed->count()) cfg.seed = o.v.seed;
  if (o.steps->count()) cfg.steps = o.v.steps;
  if (o.dtd->count()) cfg.dtd = o.v.dtd;
  if (o.cac->count()) cfg.cac = o.v.cac;
  if (o.ckpt->count()) cfg.ckpt = o.v.ckpt;
  if (o.tiling->count()) cfg.tiling = o.v.tiling;
  if (o.tile_size->count()) cfg.tile_size = o.v.tile_size;
  if (o.corrupt->count()) cfg.corrupt_drop = o.v.corrupt_drop;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw tedsim::InvalidConfigError("cannot read config file " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << "\n";
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file " + out_path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator of hybrid tensor-expert-data parallel training"};
  app.name("tedsim");
  app.require_subcommand(0, 1);

  std::string config_path;
  std::string out_path;
  std::string format;
  app.add_option("--config", config_path, "JSON config file; flags override its fields")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_path, "Write the report here instead of stdout");
  app.add_option("--format", format,
                 "Output format (default: json for train and ledger, text for verify, "
                 "csv for plan)")
      ->check(CLI::IsMember({"json", "csv", "text"}));

  RunOptions run_opts;
  add_run_options(app, run_opts);

  tedsim::PlanRequest plan_request;
  double plan_memory_gb = plan_request.budget_bytes / 1e9;
  auto* plan_group = app.add_option_group("plan mode");
  plan_group->add_option("--memory-gb", plan_memory_gb, "Per-GPU memory budget in GB");
  plan_group->add_option("--gpu-min", plan_request.world_min, "Smallest GPU count in the sweep");
  plan_group->add_option("--gpu-max", plan_request.world_max,
                         "Largest GPU count (swept by doubling)");
  plan_group->add_option("--tensor-max", plan_request.caps.tensor_max,
                         "Largest tensor-parallel degree the planner may pick");
  plan_group->add_option("--experts-max", plan_request.caps.experts_max,
                         "Largest expert count the planner may pick");

  CLI::App* train_cmd = app.add_subcommand("train", "Run training steps and emit a report");
  CLI::App* verify_cmd = app.add_subcommand("verify", "Run the invariant suite");
  CLI::App* plan_cmd = app.add_subcommand("plan", "Emit the capacity-planner table");
  CLI::App* ledger_cmd =
      app.add_subcommand("ledger", "Run training and emit only the communication ledger");
  for (CLI::App* sub : {train_cmd, verify_cmd, plan_cmd, ledger_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = tedsim::run_config_from_json(slurp(config_path));
    apply_overrides(run_opts, cfg);

    RunMode mode = cfg.mode;
    if (train_cmd->parsed()) mode = RunMode::Train;
    if (verify_cmd->parsed()) mode = RunMode::Verify;
    if (plan_cmd->parsed()) mode = RunMode::Plan;
    if (ledger_cmd->parsed()) mode = RunMode::Ledger;
    cfg.mode = mode;

    if (cfg.cac && !cfg.ckpt && mode != RunMode::Plan) {
      std::cerr << "warning: --cac has no effect without --ckpt; "
                   "collectives will run live\n";
    }
    if (const char* log = std::getenv("TEDSIM_LOG"); log && std::string(log) != "0") {
      std::cerr << "tedsim config: " << tedsim::to_json(cfg) << "\n";
    }

    switch (mode) {
      case RunMode::Train: {
        const tedsim::RunReport report = tedsim::run_training(cfg);
        if (format == "csv") {
          std::cerr << "warning: train reports are JSON; use the ledger mode for CSV\n";
        }
        emit(out_path, report.to_json());
        return 0;
      }
      case RunMode::Verify: {
        const tedsim::VerifySummary summary = tedsim::run_verify(cfg);
        emit(out_path, format == "json" ? summary.to_json() : summary.to_text());
        return summary.all_pass() ? 0 : 1;
      }
      case RunMode::Plan: {
        plan_request.budget_bytes = plan_memory_gb * 1e9;
        const std::vector<tedsim::PlanResult> rows = tedsim::run_plan(plan_request);
        emit(out_path, format == "json" ? tedsim::plan_table_json(rows)
                                        : tedsim::plan_table_csv(rows));
        return 0;
      }
      case RunMode::Ledger: {
        const tedsim::RunReport report = tedsim::run_training(cfg);
        emit(out_path, format == "csv" ? report.ledger.to_csv() : report.ledger.to_json());
        return 0;
      }
    }
    return 0;
  } catch (const tedsim::InvalidConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
