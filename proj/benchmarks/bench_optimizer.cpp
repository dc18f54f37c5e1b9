// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "tedsim/optimizer.hpp"

namespace {

void BM_OptimizerStep(benchmark::State& state) {
  const std::int64_t family = state.range(0);
  const std::int64_t tile = state.range(1);

  std::vector<double> values(static_cast<std::size_t>(family), 0.5);
  std::vector<double> grad(static_cast<std::size_t>(family), 0.25);
  std::vector<double> out(static_cast<std::size_t>(family), 0.0);

  tedsim::TileConfig tiles;
  if (tile == 0) {
    tiles.enabled = false;
  } else {
    tiles.tile_size = tile;
  }
  tedsim::OptimizerShard opt =
      tedsim::OptimizerShard::create(values, 1, 0, tedsim::AdamConfig{}, tiles);

  for (auto _ : state) {
    opt.step_owned(grad, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * family);
  state.counters["upcast_peak_bytes"] = static_cast<double>(opt.upcast_peak_bytes);
}
BENCHMARK(BM_OptimizerStep)
    ->Args({1 << 16, 0})
    ->Args({1 << 16, 4096})
    ->Args({1 << 22, 0})
    ->Args({1 << 22, 1'800'000})
    ->Unit(benchmark::kMicrosecond);

void BM_ShardedOptimizerStep(benchmark::State& state) {
  const std::int64_t family = 1 << 20;
  const int parts = static_cast<int>(state.range(0));
  std::vector<double> values(static_cast<std::size_t>(family), 0.5);
  std::vector<double> grad(static_cast<std::size_t>(family), 0.25);
  std::vector<double> out(static_cast<std::size_t>(family), 0.0);

  std::vector<tedsim::OptimizerShard> shards;
  for (int i = 0; i < parts; ++i) {
    shards.push_back(
        tedsim::OptimizerShard::create(values, parts, i, tedsim::AdamConfig{}, tedsim::TileConfig{}));
  }

  for (auto _ : state) {
    for (tedsim::OptimizerShard& s : shards) {
      s.step_owned(grad, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * family);
}
BENCHMARK(BM_ShardedOptimizerStep)->Arg(1)->Arg(4)->Arg(16)->Unit(benchmark::kMicrosecond);

}  // namespace
