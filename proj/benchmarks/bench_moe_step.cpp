// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "tedsim/moe.hpp"
#include "tedsim/topology.hpp"

namespace {

tedsim::MoeModelConfig bench_model(int layers, int hidden, int experts, int tokens) {
  tedsim::MoeModelConfig m;
  m.layers = layers;
  m.hidden = hidden;
  m.experts = experts;
  m.tokens_per_shard = tokens;
  m.seed = 5;
  return m;
}

void BM_TrainStep(benchmark::State& state) {
  const int world = static_cast<int>(state.range(0));
  const int tensor = static_cast<int>(state.range(1));
  const int experts = static_cast<int>(state.range(2));
  const bool dtd = state.range(3) != 0;

  tedsim::MoeModelConfig model = bench_model(2, 32, experts, 16);
  tedsim::TedConfig topo = tedsim::derive_config(world, tensor, experts);
  tedsim::TrainerOptions opts;
  opts.flags.dtd = dtd;
  tedsim::Trainer trainer(model, topo, opts);

  for (auto _ : state) {
    tedsim::StepReport report = trainer.step();
    benchmark::DoNotOptimize(report.loss);
  }
  state.counters["tokens_per_step"] =
      static_cast<double>(trainer.global_tokens());
}
BENCHMARK(BM_TrainStep)
    ->Args({1, 1, 1, 0})
    ->Args({4, 2, 2, 0})
    ->Args({4, 2, 2, 1})
    ->Args({8, 2, 2, 1})
    ->Args({8, 4, 2, 1})
    ->Unit(benchmark::kMillisecond);

void BM_ForwardOnly(benchmark::State& state) {
  const bool cac = state.range(0) != 0;
  tedsim::MoeModelConfig model = bench_model(4, 32, 2, 16);
  tedsim::TedConfig topo = tedsim::derive_config(4, 2, 2);
  tedsim::TrainerOptions opts;
  opts.flags.dtd = true;
  opts.flags.cac = cac;
  tedsim::Trainer trainer(model, topo, opts);

  for (auto _ : state) {
    tedsim::StepReport report = trainer.forward_only();
    benchmark::DoNotOptimize(report.loss);
  }
}
BENCHMARK(BM_ForwardOnly)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SerialReferenceStep(benchmark::State& state) {
  tedsim::MoeModelConfig model = bench_model(2, 32, 2, 16);
  tedsim::SerialModel serial(model, 4);
  for (auto _ : state) {
    tedsim::StepReport report = serial.step();
    benchmark::DoNotOptimize(report.loss);
  }
}
BENCHMARK(BM_SerialReferenceStep)->Unit(benchmark::kMillisecond);

}  // namespace
