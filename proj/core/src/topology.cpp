// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/topology.hpp"

#include <string>

namespace tedsim {

TedConfig derive_config(int world_size, int tensor_parallel, int experts) {
  auto fail = [](const std::string& msg) { throw InvalidConfigError(msg); };

  if (world_size < 1) fail("world_size must be >= 1, got " + std::to_string(world_size));
  if (tensor_parallel < 1) {
    fail("tensor_parallel must be >= 1, got " + std::to_string(tensor_parallel));
  }
  if (experts < 1) fail("experts must be >= 1, got " + std::to_string(experts));
  if (world_size % tensor_parallel != 0) {
    fail("tensor_parallel (" + std::to_string(tensor_parallel) +
         ") does not divide world_size (" + std::to_string(world_size) + ")");
  }
  const int nonexp_data = world_size / tensor_parallel;
  if (nonexp_data % experts != 0) {
    fail("experts (" + std::to_string(experts) +
         ") does not divide world_size / tensor_parallel (" + std::to_string(nonexp_data) +
         "); the expert-parallel degree equals the expert count and needs an integer "
         "expert-data degree");
  }

  TedConfig cfg;
  cfg.world_size = world_size;
  cfg.tensor_parallel = tensor_parallel;
  cfg.experts = experts;
  cfg.nonexpert_data_parallel = nonexp_data;
  cfg.expert_data_parallel = nonexp_data / experts;
  return cfg;
}

RankCoords coords_of(const TedConfig& cfg, RankId rank) {
  if (rank < 0 || rank >= cfg.world_size) {
    throw InvalidConfigError("rank " + std::to_string(rank) + " outside world [0, " +
                             std::to_string(cfg.world_size) + ")");
  }
  RankCoords c;
  c.tensor = rank % cfg.tensor_parallel;
  const int rest = rank / cfg.tensor_parallel;
  c.expert = rest % cfg.experts;
  c.data = rest / cfg.experts;
  return c;
}

RankId rank_at(const TedConfig& cfg, int tensor, int expert, int data) {
  return tensor + cfg.tensor_parallel * (expert + cfg.experts * data);
}

TopologyGroups build_groups(const TedConfig& cfg) {
  TopologyGroups topo;
  topo.cfg = cfg;
  const int t_par = cfg.tensor_parallel;
  const int n_exp = cfg.experts;
  const int d_par = cfg.expert_data_parallel;

  for (int d = 0; d < d_par; ++d) {
    for (int e = 0; e < n_exp; ++e) {
      std::vector<RankId> g(t_par);
      for (int t = 0; t < t_par; ++t) g[t] = rank_at(cfg, t, e, d);
      topo.tensor_groups.push_back(std::move(g));
    }
  }
  for (int d = 0; d < d_par; ++d) {
    for (int t = 0; t < t_par; ++t) {
      std::vector<RankId> g(n_exp);
      for (int e = 0; e < n_exp; ++e) g[e] = rank_at(cfg, t, e, d);
      topo.expert_groups.push_back(std::move(g));
    }
  }
  for (int e = 0; e < n_exp; ++e) {
    for (int t = 0; t < t_par; ++t) {
      std::vector<RankId> g(d_par);
      for (int d = 0; d < d_par; ++d) g[d] = rank_at(cfg, t, e, d);
      topo.exp_data_groups.push_back(std::move(g));
    }
  }
  for (int t = 0; t < t_par; ++t) {
    std::vector<RankId> g;
    g.reserve(cfg.nonexpert_data_parallel);
    for (int d = 0; d < d_par; ++d) {
      for (int e = 0; e < n_exp; ++e) g.push_back(rank_at(cfg, t, e, d));
    }
    topo.nonexp_data_groups.push_back(std::move(g));
  }
  return topo;
}

RankGroups groups_for_rank(const TopologyGroups& topo, RankId rank) {
  const TedConfig& cfg = topo.cfg;
  const RankCoords c = coords_of(cfg, rank);  // validates the rank
  RankGroups rg;
  rg.tensor = c.data * cfg.experts + c.expert;
  rg.expert = c.data * cfg.tensor_parallel + c.tensor;
  rg.exp_data = c.expert * cfg.tensor_parallel + c.tensor;
  rg.nonexp_data = c.tensor;
  return rg;
}

}  // namespace tedsim
