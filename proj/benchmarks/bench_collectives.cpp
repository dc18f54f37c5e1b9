// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <cstdint>
#include <numeric>
#include <vector>

#include "tedsim/fabric.hpp"
#include "tedsim/runner.hpp"

namespace {

void BM_AllReduce(benchmark::State& state) {
  const int world = static_cast<int>(state.range(0));
  const std::int64_t elems = state.range(1);
  tedsim::Fabric fabric(world);
  std::vector<tedsim::RankId> members(static_cast<std::size_t>(world));
  std::iota(members.begin(), members.end(), 0);
  tedsim::Group group = fabric.new_group(members, tedsim::GroupKind::Tensor);

  for (auto _ : state) {
    tedsim::run_ranks(world, [&](tedsim::RankId r) {
      std::vector<double> buf(static_cast<std::size_t>(elems), static_cast<double>(r));
      auto out = fabric.all_reduce(group, r, std::move(buf), tedsim::Phase::Forward,
                                   tedsim::StorageWidth::Half);
      benchmark::DoNotOptimize(out.data());
    });
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * world * elems * 2);
}
BENCHMARK(BM_AllReduce)
    ->Args({2, 1 << 10})
    ->Args({4, 1 << 10})
    ->Args({8, 1 << 10})
    ->Args({4, 1 << 16});

void BM_AllToAll(benchmark::State& state) {
  const int world = static_cast<int>(state.range(0));
  const std::int64_t per_peer = state.range(1);
  tedsim::Fabric fabric(world);
  std::vector<tedsim::RankId> members(static_cast<std::size_t>(world));
  std::iota(members.begin(), members.end(), 0);
  tedsim::Group group = fabric.new_group(members, tedsim::GroupKind::Expert);

  for (auto _ : state) {
    tedsim::run_ranks(world, [&](tedsim::RankId r) {
      std::vector<std::vector<double>> segments(static_cast<std::size_t>(world));
      for (auto& seg : segments) {
        seg.assign(static_cast<std::size_t>(per_peer), static_cast<double>(r));
      }
      auto out = fabric.all_to_all_v(group, r, std::move(segments), tedsim::Phase::Forward,
                                     tedsim::StorageWidth::Half);
      benchmark::DoNotOptimize(out.data());
    });
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * world * world *
                          per_peer * 2);
}
BENCHMARK(BM_AllToAll)->Args({2, 1 << 10})->Args({4, 1 << 10})->Args({8, 1 << 12});

void BM_AllGatherVariable(benchmark::State& state) {
  const int world = static_cast<int>(state.range(0));
  const std::int64_t elems = state.range(1);
  tedsim::Fabric fabric(world);
  std::vector<tedsim::RankId> members(static_cast<std::size_t>(world));
  std::iota(members.begin(), members.end(), 0);
  tedsim::Group group = fabric.new_group(members, tedsim::GroupKind::Tensor);

  for (auto _ : state) {
    tedsim::run_ranks(world, [&](tedsim::RankId r) {
      std::vector<double> local(static_cast<std::size_t>(elems + r), 1.0);
      auto out = fabric.all_gather_v(group, r, std::move(local), tedsim::Phase::Forward,
                                     tedsim::StorageWidth::Half);
      benchmark::DoNotOptimize(out.data());
    });
  }
}
BENCHMARK(BM_AllGatherVariable)->Args({2, 1 << 10})->Args({8, 1 << 10});

}  // namespace

BENCHMARK_MAIN();
