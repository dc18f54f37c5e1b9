// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/harness.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace tedsim {
namespace {

RunConfig small_config() {
  RunConfig cfg;
  cfg.world_size = 4;
  cfg.tensor_parallel = 2;
  cfg.experts = 2;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.tokens_per_shard = 8;
  cfg.steps = 1;
  cfg.dtd = true;
  return cfg;
}

TEST(RunConfig, JsonRoundTripPreservesEveryField) {
  RunConfig cfg = small_config();
  cfg.seed = 42;
  cfg.steps = 3;
  cfg.cac = true;
  cfg.tiling = false;
  cfg.tile_size = 123;
  cfg.mode = RunMode::Verify;
  RunConfig back = run_config_from_json(to_json(cfg));
  EXPECT_EQ(back.world_size, cfg.world_size);
  EXPECT_EQ(back.tensor_parallel, cfg.tensor_parallel);
  EXPECT_EQ(back.experts, cfg.experts);
  EXPECT_EQ(back.layers, cfg.layers);
  EXPECT_EQ(back.hidden, cfg.hidden);
  EXPECT_EQ(back.tokens_per_shard, cfg.tokens_per_shard);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(back.steps, cfg.steps);
  EXPECT_EQ(back.dtd, cfg.dtd);
  EXPECT_EQ(back.cac, cfg.cac);
  EXPECT_EQ(back.ckpt, cfg.ckpt);
  EXPECT_EQ(back.tiling, cfg.tiling);
  EXPECT_EQ(back.tile_size, cfg.tile_size);
  EXPECT_EQ(back.mode, cfg.mode);
}

TEST(RunConfig, RejectsUnknownKeysAndWrongTypes) {
  EXPECT_THROW(run_config_from_json("{\"world_sizee\": 2}"), InvalidConfigError);
  EXPECT_THROW(run_config_from_json("{\"world_size\": \"big\"}"), InvalidConfigError);
  EXPECT_THROW(run_config_from_json("not json"), InvalidConfigError);
  EXPECT_THROW(run_config_from_json("[1, 2]"), InvalidConfigError);
}

TEST(RunMode, ParsesAllNamesAndRejectsOthers) {
  EXPECT_EQ(parse_run_mode("train"), RunMode::Train);
  EXPECT_EQ(parse_run_mode("verify"), RunMode::Verify);
  EXPECT_EQ(parse_run_mode("plan"), RunMode::Plan);
  EXPECT_EQ(parse_run_mode("ledger"), RunMode::Ledger);
  EXPECT_THROW(parse_run_mode("bogus"), InvalidConfigError);
  for (RunMode m : {RunMode::Train, RunMode::Verify, RunMode::Plan, RunMode::Ledger}) {
    EXPECT_EQ(parse_run_mode(to_string(m)), m);
  }
}

TEST(RunTraining, ReportsAreByteIdenticalAcrossRuns) {
  RunConfig cfg = small_config();
  cfg.steps = 2;
  RunReport a = run_training(cfg);
  RunReport b = run_training(cfg);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.losses.size(), 2u);
}

TEST(RunTraining, SingleRankRunHasAnEmptyLedger) {
  RunConfig cfg;
  cfg.world_size = 1;
  cfg.layers = 2;
  RunReport r = run_training(cfg);
  EXPECT_EQ(r.ledger.grand_total().calls, 0u);
  nlohmann::json j = nlohmann::json::parse(r.to_json());
  EXPECT_TRUE(j["ledger"].is_array());
  EXPECT_EQ(j["ledger"].size(), 0u);
  EXPECT_EQ(j["memory"].size(), 1u);
  EXPECT_EQ(j["version"], kReportVersion);
}

TEST(RunVerify, AllChecksPassOnAHealthyConfig) {
  VerifySummary s = run_verify(small_config());
  EXPECT_TRUE(s.all_pass());
  bool saw_serial = false, saw_prediction = false, saw_sweep = false;
  for (const VerifyCheck& c : s.checks) {
    EXPECT_TRUE(c.pass) << c.name << ": " << c.detail;
    saw_serial |= c.name == "serial-equivalence";
    saw_prediction |= c.name == "ledger-vs-prediction";
    saw_sweep |= c.name == "small-world-sweep";
  }
  EXPECT_TRUE(saw_serial);
  EXPECT_TRUE(saw_prediction);
  EXPECT_TRUE(saw_sweep);
  EXPECT_NE(s.to_text().find("[PASS] serial-equivalence"), std::string::npos);
}

TEST(RunVerify, FaultInjectionTripsThePlacementCheck) {
  RunConfig cfg = small_config();
  cfg.corrupt_drop = true;
  VerifySummary s = run_verify(cfg);
  EXPECT_FALSE(s.all_pass());
  bool placement_failed = false;
  for (const VerifyCheck& c : s.checks) {
    if (c.name == "token-placement") placement_failed = !c.pass;
  }
  EXPECT_TRUE(placement_failed);
  EXPECT_NE(s.to_text().find("[FAIL] token-placement"), std::string::npos);
}

TEST(RunPlan, SweepsDoublingWorldSizes) {
  PlanRequest req;
  req.world_min = 32;
  req.world_max = 512;
  std::vector<PlanResult> rows = run_plan(req);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0].world_size, 32);
  EXPECT_EQ(rows[4].world_size, 512);
  PlanRequest bad;
  bad.world_min = 0;
  EXPECT_THROW(run_plan(bad), InvalidConfigError);
  PlanRequest inverted;
  inverted.world_min = 64;
  inverted.world_max = 32;
  EXPECT_THROW(run_plan(inverted), InvalidConfigError);
}

// ---------------------------------------------------------------------------
// End-to-end runs of the installed command-line binary.

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  const std::string base = std::string("/tmp/tedsim_cli_") + std::to_string(getpid()) + "_" +
                           std::to_string(counter++);
  const std::string out_file = base + ".out";
  const std::string err_file = base + ".err";
  const std::string cmd = env_prefix + std::string(TEDSIM_BIN) + " " + args + " > " + out_file +
                          " 2> " + err_file;
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  std::remove(out_file.c_str());
  std::remove(err_file.c_str());
  return r;
}

TEST(Cli, TrainEmitsAParsableReport) {
  CliResult r = run_cli("train --world-size 4 --tensor-parallel 2 --experts 2 --layers 1 "
                        "--hidden 8 --tokens 8 --steps 1 --dtd");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  nlohmann::json j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["config"]["world_size"], 4);
  EXPECT_EQ(j["config"]["dtd"], true);
  EXPECT_EQ(j["losses"].size(), 1u);
  EXPECT_GT(j["ledger"].size(), 0u);
  EXPECT_EQ(j["memory"].size(), 4u);
}

TEST(Cli, IdenticalInvocationsProduceIdenticalBytes) {
  const std::string args = "train --world-size 4 --tensor-parallel 2 --experts 2 --layers 2 "
                           "--hidden 8 --tokens 8 --steps 2 --dtd --cac";
  CliResult a = run_cli(args);
  CliResult b = run_cli(args);
  ASSERT_EQ(a.exit_code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
}

TEST(Cli, InvalidTopologyExitsWithConfigError) {
  CliResult r = run_cli("train --world-size 3 --tensor-parallel 2");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("config error"), std::string::npos);
}

TEST(Cli, UnknownFlagExitsWithUsageError) {
  CliResult r = run_cli("train --no-such-flag");
  EXPECT_EQ(r.exit_code, 2);
}

TEST(Cli, VerifyPassesCleanAndFailsCorrupted) {
  CliResult ok = run_cli("verify --world-size 4 --tensor-parallel 2 --experts 2 --layers 1 "
                         "--hidden 8 --tokens 8 --dtd");
  EXPECT_EQ(ok.exit_code, 0) << ok.out;
  EXPECT_NE(ok.out.find("[PASS]"), std::string::npos);

  CliResult bad = run_cli("verify --world-size 4 --tensor-parallel 2 --experts 2 --layers 1 "
                          "--hidden 8 --tokens 8 --dtd --corrupt-drop");
  EXPECT_EQ(bad.exit_code, 1);
  EXPECT_NE(bad.out.find("[FAIL] token-placement"), std::string::npos);
}

TEST(Cli, ConfigFileDrivesTheRunAndFlagsOverrideIt) {
  const std::string path = "/tmp/tedsim_cli_cfg_" + std::to_string(getpid()) + ".json";
  {
    std::ofstream out(path);
    out << "{\"world_size\": 4, \"tensor_parallel\": 2, \"experts\": 2, \"layers\": 1,\n"
           " \"hidden\": 8, \"tokens_per_shard\": 8, \"steps\": 1, \"mode\": \"train\"}\n";
  }
  CliResult r = run_cli("--config " + path + " --steps 2");
  std::remove(path.c_str());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  nlohmann::json j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["config"]["steps"], 2);       // flag wins over file
  EXPECT_EQ(j["config"]["world_size"], 4);  // file value survives
  EXPECT_EQ(j["losses"].size(), 2u);
}

TEST(Cli, UnknownConfigKeyIsAConfigError) {
  const std::string path = "/tmp/tedsim_cli_badcfg_" + std::to_string(getpid()) + ".json";
  {
    std::ofstream out(path);
    out << "{\"world_sizee\": 4}\n";
  }
  CliResult r = run_cli("--config " + path + " train");
  std::remove(path.c_str());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("unknown config key"), std::string::npos);
}

TEST(Cli, PlanWritesCsvByDefaultAndJsonOnRequest) {
  CliResult csv = run_cli("plan --gpu-min 32 --gpu-max 64");
  ASSERT_EQ(csv.exit_code, 0) << csv.err;
  EXPECT_EQ(csv.out.rfind("world_size", 0), 0u);  // header first
  EXPECT_NE(csv.out.find("\n32,"), std::string::npos);
  EXPECT_NE(csv.out.find("\n64,"), std::string::npos);

  CliResult js = run_cli("plan --gpu-min 32 --gpu-max 64 --format json");
  ASSERT_EQ(js.exit_code, 0) << js.err;
  nlohmann::json j = nlohmann::json::parse(js.out);
  ASSERT_TRUE(j.is_array());
  // Two world sizes, each with a ted row and a baseline row.
  ASSERT_EQ(j.size(), 4u);
  EXPECT_EQ(j[0]["world_size"], 32);
  EXPECT_EQ(j[0]["framework"], "ted");
  EXPECT_EQ(j[3]["framework"], "baseline");
}

TEST(Cli, LedgerModeEmitsPredictedTraffic) {
  CliResult js = run_cli("ledger --world-size 4 --tensor-parallel 2 --experts 2 --layers 1 "
                         "--hidden 8 --tokens 8 --steps 1");
  ASSERT_EQ(js.exit_code, 0) << js.err;
  nlohmann::json j = nlohmann::json::parse(js.out);
  EXPECT_TRUE(j.is_array());
  EXPECT_GT(j.size(), 0u);

  CliResult csv = run_cli("ledger --world-size 4 --tensor-parallel 2 --experts 2 --layers 1 "
                          "--hidden 8 --tokens 8 --format csv");
  ASSERT_EQ(csv.exit_code, 0);
  EXPECT_EQ(csv.out.rfind("phase,", 0), 0u);
}

TEST(Cli, ReplayWithoutCheckpointingWarns) {
  CliResult r = run_cli("train --world-size 2 --experts 2 --cac --no-ckpt");
  EXPECT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.err.find("--cac has no effect"), std::string::npos);
}

TEST(Cli, EnvironmentVariableEchoesTheResolvedConfig) {
  CliResult r = run_cli("train --world-size 1", "TEDSIM_LOG=1 ");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.err.find("tedsim config:"), std::string::npos);
}

TEST(Cli, HelpExitsCleanly) {
  CliResult r = run_cli("--help");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("train"), std::string::npos);
}

}  // namespace
}  // namespace tedsim
