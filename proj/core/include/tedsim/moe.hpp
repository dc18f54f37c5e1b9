// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tedsim/channel.hpp"
#include "tedsim/fabric.hpp"
#include "tedsim/optimizer.hpp"
#include "tedsim/tensor.hpp"
#include "tedsim/topology.hpp"

namespace tedsim {

// Stacked transformer-style blocks: every layer carries an attention
// stand-in (a two-linear MLP with a gelu between), even-indexed layers route
// tokens through per-rank experts, odd-indexed layers use a dense FFN.
struct MoeModelConfig {
  int layers = 1;
  int hidden = 8;
  int experts = 2;
  int tokens_per_shard = 8;
  std::uint64_t seed = 1;
};

// Inner width of every two-linear block, as a multiple of hidden.
inline constexpr int kFfnMultiple = 4;

inline bool layer_has_experts(int layer) { return layer % 2 == 0; }
inline int moe_layer_count(int layers) { return (layers + 1) / 2; }

void validate_model(const MoeModelConfig& model);

struct RunFlags {
  bool dtd = false;           // drop local duplicate tokens before dispatch
  bool cac = false;           // stash forward collectives, replay on recompute
  bool ckpt = true;           // recompute layer activations during backward
  bool track_tokens = false;  // retain per-layer token placement debug info
  bool corrupt_drop = false;  // fault injection: keep the wrong token chunk
};

// Description of one parameter tensor at full (unsharded) shape.
struct ParamDesc {
  std::string name;
  std::vector<std::int64_t> shape;
  double scale = 1.0;
  bool expert_owned = false;  // gradients sync over the expert data group
  int expert_index = -1;      // >= 0 for per-expert tensors
  ShardAxis axis = ShardAxis::None;
};

// Full parameter list for a model, experts included, in canonical order.
// Per-rank and serial instantiations both derive from this, which is what
// keeps names, shapes, and init seeds aligned between them.
std::vector<ParamDesc> enumerate_params(const MoeModelConfig& model);

struct Parameter {
  ParamDesc desc;
  ShardSpec spec;  // how `value` relates to the full tensor
  Tensor value;
  Tensor grad;
};

Parameter make_parameter(const ParamDesc& desc, std::uint64_t model_seed, const ShardSpec& spec);

// Top-1 routing over a replicated linear gate.
struct GateResult {
  std::vector<int> expert_of;       // chosen expert per token (ties: lowest index)
  std::vector<double> chosen_prob;  // softmax probability of the chosen expert
  Tensor probs;                     // [tokens, experts]
};

GateResult gate_forward(const Tensor& activations, const Tensor& gate_weight);

struct GateGrads {
  Tensor dweight;
  Tensor dinput;
};

// Backward of (softmax + select): dchosen_prob[k] is dL/d(prob of the chosen
// expert of token k); other logits feel it through the softmax coupling.
GateGrads gate_backward(const Tensor& activations, const Tensor& gate_weight,
                        const GateResult& gate, const std::vector<double>& dchosen_prob);

struct TrainerOptions {
  RunFlags flags;
  bool shard_optimizer = true;  // stage-1 state sharding over the data groups
  TileConfig tiles;
  AdamConfig adam;
  std::chrono::milliseconds collective_timeout{20000};
};

// Per-layer activations a rank keeps for backward (or rebuilds during
// recompute). The dispatch bookkeeping is all locally derivable: member
// positions in the expert group equal expert indices, and dropped chunks
// reassemble by member position in the tensor group.
struct LayerActs {
  Tensor x;   // layer input [n, h]
  Tensor z1;  // attention block pre-gelu (column shard)
  Tensor h1;  // attention block post-gelu (column shard)
  Tensor a;   // attention block output [n, h]

  Tensor fz1;  // dense FFN pre-gelu (column shard)
  Tensor fh1;  // dense FFN post-gelu (column shard)

  GateResult gate;
  std::vector<int> kept;         // local token indices sent to dispatch, ascending
  std::vector<int> send_counts;  // rows sent per expert-group member
  std::vector<int> recv_counts;  // rows received per expert-group member
  std::int64_t own_offset = 0;   // row offset of this rank's block in `assembled`
  Tensor assembled;              // expert input rows [s, h]
  Tensor ez1;                    // expert block pre-gelu (column shard)
  Tensor eh1;                    // expert block post-gelu (column shard)
  Tensor f_home;                 // per-token expert outputs back at home [n, h]
  bool placement_ok = true;
};

struct StepReport {
  double loss = 0.0;
  std::vector<double> shard_losses;  // indexed by data shard
};

// One rank's model shard plus the step logic that runs on its thread. The
// four groups must be fabric-registered once and shared by all members;
// the Trainer handles that.
class MoeRank {
 public:
  MoeRank(const MoeModelConfig& model, const TedConfig& topo, RankId rank, Fabric* fabric,
          Group tensor_g, Group expert_g, Group exp_data_g, Group nonexp_data_g,
          const TrainerOptions& opts);

  RankId rank() const { return rank_; }
  const RankCoords& coords() const { return coords_; }
  int shard_index() const { return shard_index_; }

  double run_forward();
  void run_backward();
  void run_grad_sync();
  void run_optimizer_step();

  const std::vector<Parameter>& params() const { return params_; }
  Parameter& param(const std::string& name);
  const Parameter* find_param(const std::string& name) const;
  // Overwrites a parameter from its full tensor; optimizer state for the
  // rank resets at the next optimizer step.
  void set_param_value(const std::string& name, const Tensor& full_value);

  // Valid after run_forward when activation checkpointing is off.
  const std::vector<LayerActs>& acts() const { return acts_; }
  double local_loss() const { return local_loss_; }
  bool placement_ok() const { return placement_ok_; }
  // Per-layer placement verdicts from the last forward, retained when
  // track_tokens is set (index = layer).
  const std::vector<std::uint8_t>& layer_placement() const { return layer_placement_; }

  MemoryReport memory_report() const;

 private:
  struct Slots {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  };
  struct LayerSlots {
    Slots attn;
    Slots ffn;
    Slots expert;
    int gate = -1;
    bool moe = false;
  };

  Tensor forward_layer(int layer, const Tensor& x, LayerActs& A);
  Tensor backward_layer(int layer, const LayerActs& A, const Tensor& dy);
  std::vector<double> flatten_family(bool expert_owned, bool grads) const;
  void unflatten_family(bool expert_owned, const std::vector<double>& flat, bool grads);
  void zero_grads();
  void family_optimizer_step(bool expert_owned, OptimizerShard& opt, const Group& group);

  MoeModelConfig model_;
  TedConfig topo_;
  RankId rank_ = 0;
  RankCoords coords_;
  int shard_index_ = 0;
  TrainerOptions opts_;
  Fabric* fabric_ = nullptr;
  Group tensor_g_, expert_g_, exp_data_g_, nonexp_data_g_;
  CollectiveChannel channel_;

  std::vector<Parameter> params_;
  std::map<std::string, int> param_index_;
  std::vector<LayerSlots> slots_;
  std::int64_t nonexp_elems_ = 0;
  std::int64_t exp_elems_ = 0;

  Tensor batch_;
  std::int64_t global_tokens_ = 0;

  std::vector<LayerActs> acts_;
  std::vector<Tensor> ckpt_x_;
  std::vector<CommStash> stash_;
  Tensor y_final_;
  double local_loss_ = 0.0;
  bool placement_ok_ = true;
  std::vector<std::uint8_t> layer_placement_;

  std::uint64_t ckpt_now_ = 0, ckpt_peak_ = 0;
  std::uint64_t stash_now_ = 0, stash_peak_ = 0;

  OptimizerShard opt_nonexp_;
  OptimizerShard opt_exp_;
  bool reset_masters_ = false;
};

// Drives one rank thread per model rank through lock-step training steps and
// assembles cross-rank views for inspection. The global loss is the sum of
// shard losses taken in shard order on the driver, not a fabric collective,
// so the communication ledger holds schedule traffic only.
class Trainer {
 public:
  Trainer(const MoeModelConfig& model, const TedConfig& topo, TrainerOptions opts = {});

  StepReport step();
  StepReport forward_only();

  Fabric& fabric() { return fabric_; }
  const TedConfig& topo() const { return topo_; }
  const MoeModelConfig& model() const { return model_; }
  const TrainerOptions& options() const { return opts_; }
  MoeRank& rank(RankId r);
  std::int64_t global_tokens() const;

  std::map<std::string, Tensor> full_parameters();
  std::map<std::string, Tensor> full_gradients();
  void set_parameter(const std::string& name, const Tensor& full_value);
  bool placement_ok() const;
  MemoryReport memory_report(RankId r);

 private:
  std::map<std::string, Tensor> assemble(bool grads);

  MoeModelConfig model_;
  TedConfig topo_;
  TrainerOptions opts_;
  Fabric fabric_;
  TopologyGroups groups_;
  std::vector<Group> fab_tensor_, fab_expert_, fab_exp_data_, fab_nonexp_data_;
  std::vector<std::unique_ptr<MoeRank>> ranks_;
};

// Single-process reference: same parameters, same batch, same math, no
// fabric. Parallel runs are checked against it in the tests.
struct SerialLayerActs {
  Tensor x, z1, h1, a;
  Tensor fz1, fh1;
  GateResult gate;
  std::vector<std::vector<int>> expert_rows;  // per expert, token rows ascending
  std::vector<Tensor> ez1, eh1;               // per expert
  Tensor f_home;
};

class SerialModel {
 public:
  SerialModel(const MoeModelConfig& model, int data_shards, TrainerOptions opts = {});

  StepReport step();
  double forward_only();

  const std::vector<Parameter>& params() const { return params_; }
  Parameter& param(const std::string& name);
  void set_parameter(const std::string& name, const Tensor& full_value);
  const std::vector<SerialLayerActs>& acts() const { return acts_; }
  std::int64_t global_tokens() const { return global_tokens_; }

 private:
  struct Slots {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  };
  struct LayerSlots {
    Slots attn;
    Slots ffn;
    std::vector<Slots> experts;
    int gate = -1;
    bool moe = false;
  };

  Tensor forward_layer(int layer, const Tensor& x, SerialLayerActs& A);
  Tensor backward_layer(int layer, const SerialLayerActs& A, const Tensor& dy);
  void zero_grads();

  MoeModelConfig model_;
  TrainerOptions opts_;
  int data_shards_ = 1;
  std::vector<Parameter> params_;
  std::map<std::string, int> param_index_;
  std::vector<LayerSlots> slots_;
  Tensor batch_;
  std::int64_t global_tokens_ = 0;
  std::vector<SerialLayerActs> acts_;
  Tensor y_final_;
  OptimizerShard opt_;
  bool opt_ready_ = false;
};

}  // namespace tedsim
