// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "tedsim/types.hpp"

namespace tedsim {

// Degrees of the three-way parallel decomposition. world_size factors as
//
//   world_size = tensor_parallel * experts * expert_data_parallel
//              = tensor_parallel * nonexpert_data_parallel
//
// The expert-parallel degree always equals the expert count, so every rank
// houses exactly one expert's shard per expert-bearing layer, and the two
// data-parallel degrees are tied by
//
//   expert_data_parallel = nonexpert_data_parallel / experts.
struct TedConfig {
  int world_size = 1;
  int tensor_parallel = 1;
  int experts = 1;
  int expert_data_parallel = 1;
  int nonexpert_data_parallel = 1;
};

// Validates and completes a config from the three free degrees. Throws
// InvalidConfigError naming the violated constraint.
TedConfig derive_config(int world_size, int tensor_parallel, int experts);

// Coordinates of a rank in the (tensor, expert, data) grid. Ranks are laid
// out tensor-major:  rank = t + tensor_parallel * (e + experts * d),
// so consecutive ranks form tensor groups (they would share a node in a real
// machine, where the highest-traffic all-reduces want the fastest links).
struct RankCoords {
  int tensor = 0;
  int expert = 0;
  int data = 0;
};

RankCoords coords_of(const TedConfig& cfg, RankId rank);
RankId rank_at(const TedConfig& cfg, int tensor, int expert, int data);

// The four group families. Each family partitions [0, world_size).
//
//   tensor groups      vary t, fixed (e, d)   size tensor_parallel
//   expert groups      vary e, fixed (t, d)   size experts
//   exp-data groups    vary d, fixed (t, e)   size expert_data_parallel
//   nonexp-data groups vary (e, d), fixed t   size nonexpert_data_parallel
//
// Members are listed in ascending rank order, which is also the reduction
// order of every collective run over them.
struct TopologyGroups {
  TedConfig cfg;
  std::vector<std::vector<RankId>> tensor_groups;
  std::vector<std::vector<RankId>> expert_groups;
  std::vector<std::vector<RankId>> exp_data_groups;
  std::vector<std::vector<RankId>> nonexp_data_groups;
};

TopologyGroups build_groups(const TedConfig& cfg);

// Indices into the four family vectors for one rank.
struct RankGroups {
  int tensor = 0;
  int expert = 0;
  int exp_data = 0;
  int nonexp_data = 0;
};

RankGroups groups_for_rank(const TopologyGroups& topo, RankId rank);

}  // namespace tedsim
