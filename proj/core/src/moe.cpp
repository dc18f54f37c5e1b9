// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/moe.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "tedsim/nn.hpp"
#include "tedsim/parallel_linear.hpp"
#include "tedsim/runner.hpp"

namespace tedsim {

namespace {

Tensor rows_range(const Tensor& t, std::int64_t at, std::int64_t len) {
  Tensor out;
  out.width = t.width;
  const std::int64_t c = t.cols();
  out.shape = {len, c};
  out.data.assign(t.data.begin() + at * c, t.data.begin() + (at + len) * c);
  return out;
}

Tensor rows_subset(const Tensor& t, const std::vector<int>& rows) {
  Tensor out;
  out.width = t.width;
  const std::int64_t c = t.cols();
  out.shape = {static_cast<std::int64_t>(rows.size()), c};
  out.data.reserve(rows.size() * static_cast<std::size_t>(c));
  for (int r : rows) {
    out.data.insert(out.data.end(), t.data.begin() + static_cast<std::int64_t>(r) * c,
                    t.data.begin() + (static_cast<std::int64_t>(r) + 1) * c);
  }
  return out;
}

void scatter_rows(Tensor& dst, const std::vector<int>& rows, const Tensor& src) {
  const std::int64_t c = dst.cols();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(src.data.begin() + static_cast<std::int64_t>(i) * c,
              src.data.begin() + static_cast<std::int64_t>(i + 1) * c,
              dst.data.begin() + static_cast<std::int64_t>(rows[i]) * c);
  }
}

Tensor tensor_from_flat(std::vector<double> flat, std::int64_t cols, StorageWidth width) {
  if (cols <= 0 || flat.size() % static_cast<std::size_t>(cols) != 0) {
    throw ProtocolError("received buffer of " + std::to_string(flat.size()) +
                        " elements is not a whole number of " + std::to_string(cols) +
                        "-wide rows");
  }
  Tensor t;
  t.width = width;
  t.shape = {static_cast<std::int64_t>(flat.size()) / cols, cols};
  t.data = std::move(flat);
  return t;
}

void accumulate(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) {
    throw ProtocolError("gradient accumulation shape mismatch");
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

Tensor add_tensors(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  accumulate(out, b);
  return out;
}

Tensor assemble_full(const ParamDesc& desc, const std::vector<const Tensor*>& parts) {
  if (desc.axis == ShardAxis::None || parts.size() == 1) return *parts[0];
  Tensor out = Tensor::zeros(desc.shape, parts[0]->width);
  const int count = static_cast<int>(parts.size());
  if (desc.axis == ShardAxis::Column) {
    const std::int64_t r = out.rows();
    const std::int64_t w = out.cols() / count;
    for (int t = 0; t < count; ++t) {
      for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < w; ++j) out.at(i, t * w + j) = parts[t]->at(i, j);
      }
    }
    return out;
  }
  std::size_t at = 0;
  for (int t = 0; t < count; ++t) {
    std::copy(parts[t]->data.begin(), parts[t]->data.end(), out.data.begin() + at);
    at += parts[t]->data.size();
  }
  return out;
}

}  // namespace

void validate_model(const MoeModelConfig& model) {
  if (model.layers < 1) {
    throw InvalidConfigError("layers must be >= 1, got " + std::to_string(model.layers));
  }
  if (model.hidden < 1) {
    throw InvalidConfigError("hidden must be >= 1, got " + std::to_string(model.hidden));
  }
  if (model.experts < 1) {
    throw InvalidConfigError("experts must be >= 1, got " + std::to_string(model.experts));
  }
  if (model.tokens_per_shard < 1) {
    throw InvalidConfigError("tokens_per_shard must be >= 1, got " +
                             std::to_string(model.tokens_per_shard));
  }
}

std::vector<ParamDesc> enumerate_params(const MoeModelConfig& model) {
  validate_model(model);
  const std::int64_t h = model.hidden;
  const std::int64_t f = static_cast<std::int64_t>(kFfnMultiple) * h;
  const double wscale_in = 1.0 / std::sqrt(static_cast<double>(h));
  const double wscale_out = 1.0 / std::sqrt(static_cast<double>(f));
  const double bscale = 0.1;

  std::vector<ParamDesc> out;
  auto block = [&](const std::string& prefix, bool expert_owned, int expert_index) {
    out.push_back({prefix + ".w1", {h, f}, wscale_in, expert_owned, expert_index,
                   ShardAxis::Column});
    out.push_back({prefix + ".b1", {f}, bscale, expert_owned, expert_index, ShardAxis::Column});
    out.push_back({prefix + ".w2", {f, h}, wscale_out, expert_owned, expert_index,
                   ShardAxis::Row});
    out.push_back({prefix + ".b2", {h}, bscale, expert_owned, expert_index, ShardAxis::None});
  };

  for (int l = 0; l < model.layers; ++l) {
    const std::string lp = "layer" + std::to_string(l);
    block(lp + ".attn", false, -1);
    if (layer_has_experts(l)) {
      out.push_back({lp + ".gate.w", {h, static_cast<std::int64_t>(model.experts)}, wscale_in,
                     false, -1, ShardAxis::None});
      for (int e = 0; e < model.experts; ++e) {
        block(lp + ".expert" + std::to_string(e), true, e);
      }
    } else {
      block(lp + ".ffn", false, -1);
    }
  }
  return out;
}

Parameter make_parameter(const ParamDesc& desc, std::uint64_t model_seed, const ShardSpec& spec) {
  Parameter p;
  p.desc = desc;
  p.spec = spec;
  p.value = seeded_init(desc.shape, mix_seed(model_seed, desc.name), desc.scale, spec);
  p.grad = Tensor::zeros(p.value.shape, p.value.width);
  return p;
}

GateResult gate_forward(const Tensor& activations, const Tensor& gate_weight) {
  const Tensor logits = matmul(activations, gate_weight);
  const std::int64_t n = logits.rows();
  const std::int64_t ex = logits.cols();
  GateResult g;
  g.probs = Tensor::zeros({n, ex});
  g.expert_of.resize(static_cast<std::size_t>(n));
  g.chosen_prob.resize(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < n; ++k) {
    double top = logits.at(k, 0);
    int best = 0;
    for (std::int64_t j = 1; j < ex; ++j) {
      if (logits.at(k, j) > top) {
        top = logits.at(k, j);
        best = static_cast<int>(j);
      }
    }
    double sum = 0.0;
    for (std::int64_t j = 0; j < ex; ++j) {
      const double e = std::exp(logits.at(k, j) - top);
      g.probs.at(k, j) = e;
      sum += e;
    }
    for (std::int64_t j = 0; j < ex; ++j) g.probs.at(k, j) /= sum;
    g.expert_of[static_cast<std::size_t>(k)] = best;
    g.chosen_prob[static_cast<std::size_t>(k)] = g.probs.at(k, best);
  }
  return g;
}

GateGrads gate_backward(const Tensor& activations, const Tensor& gate_weight,
                        const GateResult& gate, const std::vector<double>& dchosen_prob) {
  const std::int64_t n = gate.probs.rows();
  const std::int64_t ex = gate.probs.cols();
  if (static_cast<std::int64_t>(dchosen_prob.size()) != n) {
    throw InvalidConfigError("gate backward got " + std::to_string(dchosen_prob.size()) +
                             " gradients for " + std::to_string(n) + " tokens");
  }
  Tensor dlogits = Tensor::zeros({n, ex});
  for (std::int64_t k = 0; k < n; ++k) {
    const int e = gate.expert_of[static_cast<std::size_t>(k)];
    const double coef = dchosen_prob[static_cast<std::size_t>(k)] * gate.probs.at(k, e);
    for (std::int64_t j = 0; j < ex; ++j) {
      dlogits.at(k, j) = coef * ((j == e ? 1.0 : 0.0) - gate.probs.at(k, j));
    }
  }
  GateGrads g;
  g.dweight = matmul_tn(activations, dlogits);
  g.dinput = matmul_nt(dlogits, gate_weight);
  return g;
}

// ---------------------------------------------------------------------------
// MoeRank

MoeRank::MoeRank(const MoeModelConfig& model, const TedConfig& topo, RankId rank, Fabric* fabric,
                 Group tensor_g, Group expert_g, Group exp_data_g, Group nonexp_data_g,
                 const TrainerOptions& opts)
    : model_(model),
      topo_(topo),
      rank_(rank),
      coords_(coords_of(topo, rank)),
      opts_(opts),
      fabric_(fabric),
      tensor_g_(std::move(tensor_g)),
      expert_g_(std::move(expert_g)),
      exp_data_g_(std::move(exp_data_g)),
      nonexp_data_g_(std::move(nonexp_data_g)),
      channel_(*fabric, rank) {
  opts_.flags.cac = opts_.flags.cac && opts_.flags.ckpt;
  const int shards = topo_.experts * topo_.expert_data_parallel;
  shard_index_ = coords_.data * topo_.experts + coords_.expert;
  global_tokens_ = static_cast<std::int64_t>(model_.tokens_per_shard) * shards;

  const int T = topo_.tensor_parallel;
  for (const ParamDesc& d : enumerate_params(model_)) {
    if (d.expert_index >= 0 && d.expert_index != coords_.expert) continue;
    ShardSpec spec = ShardSpec::full();
    if (d.axis == ShardAxis::Column) spec = ShardSpec::column(coords_.tensor, T);
    if (d.axis == ShardAxis::Row) spec = ShardSpec::row(coords_.tensor, T);
    params_.push_back(make_parameter(d, model_.seed, spec));
    param_index_[d.name] = static_cast<int>(params_.size()) - 1;
  }
  for (const Parameter& p : params_) {
    (p.desc.expert_owned ? exp_elems_ : nonexp_elems_) += p.value.numel();
  }

  auto idx = [&](const std::string& name) {
    auto it = param_index_.find(name);
    return it == param_index_.end() ? -1 : it->second;
  };
  slots_.resize(static_cast<std::size_t>(model_.layers));
  for (int l = 0; l < model_.layers; ++l) {
    LayerSlots& S = slots_[static_cast<std::size_t>(l)];
    const std::string lp = "layer" + std::to_string(l);
    S.attn = {idx(lp + ".attn.w1"), idx(lp + ".attn.b1"), idx(lp + ".attn.w2"),
              idx(lp + ".attn.b2")};
    S.moe = layer_has_experts(l);
    if (S.moe) {
      S.gate = idx(lp + ".gate.w");
      const std::string ep = lp + ".expert" + std::to_string(coords_.expert);
      S.expert = {idx(ep + ".w1"), idx(ep + ".b1"), idx(ep + ".w2"), idx(ep + ".b2")};
    } else {
      S.ffn = {idx(lp + ".ffn.w1"), idx(lp + ".ffn.b1"), idx(lp + ".ffn.w2"),
               idx(lp + ".ffn.b2")};
    }
  }

  batch_ = seeded_init({global_tokens_, model_.hidden}, mix_seed(model_.seed, "batch"), 1.0,
                       ShardSpec::row(shard_index_, shards));

  const int gs_non = opts_.shard_optimizer ? nonexp_data_g_.size() : 1;
  const int pos_non = opts_.shard_optimizer ? nonexp_data_g_.position_of(rank_) : 0;
  opt_nonexp_ = OptimizerShard::create(flatten_family(false, false), gs_non, pos_non, opts_.adam,
                                       opts_.tiles);
  const int gs_exp = opts_.shard_optimizer ? exp_data_g_.size() : 1;
  const int pos_exp = opts_.shard_optimizer ? exp_data_g_.position_of(rank_) : 0;
  opt_exp_ = OptimizerShard::create(flatten_family(true, false), gs_exp, pos_exp, opts_.adam,
                                    opts_.tiles);
}

Parameter& MoeRank::param(const std::string& name) {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) {
    throw InvalidConfigError("no parameter named " + name + " on rank " + std::to_string(rank_));
  }
  return params_[static_cast<std::size_t>(it->second)];
}

const Parameter* MoeRank::find_param(const std::string& name) const {
  auto it = param_index_.find(name);
  return it == param_index_.end() ? nullptr : &params_[static_cast<std::size_t>(it->second)];
}

void MoeRank::set_param_value(const std::string& name, const Tensor& full_value) {
  Parameter& p = param(name);
  if (full_value.shape != p.desc.shape) {
    throw InvalidConfigError("assigned tensor shape does not match parameter " + name);
  }
  p.value = slice_tensor(full_value, p.spec);
  p.value.width = StorageWidth::Half;
  p.grad = Tensor::zeros(p.value.shape, p.value.width);
  reset_masters_ = true;
}

std::vector<double> MoeRank::flatten_family(bool expert_owned, bool grads) const {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(expert_owned ? exp_elems_ : nonexp_elems_));
  for (const Parameter& p : params_) {
    if (p.desc.expert_owned != expert_owned) continue;
    const Tensor& t = grads ? p.grad : p.value;
    flat.insert(flat.end(), t.data.begin(), t.data.end());
  }
  return flat;
}

void MoeRank::unflatten_family(bool expert_owned, const std::vector<double>& flat, bool grads) {
  std::size_t at = 0;
  for (Parameter& p : params_) {
    if (p.desc.expert_owned != expert_owned) continue;
    Tensor& t = grads ? p.grad : p.value;
    if (at + t.data.size() > flat.size()) {
      throw ProtocolError("family buffer shorter than the parameter list");
    }
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
              flat.begin() + static_cast<std::ptrdiff_t>(at + t.data.size()), t.data.begin());
    at += t.data.size();
  }
  if (at != flat.size()) {
    throw ProtocolError("family buffer longer than the parameter list");
  }
}

void MoeRank::zero_grads() {
  for (Parameter& p : params_) p.grad = Tensor::zeros(p.value.shape, p.value.width);
}

double MoeRank::run_forward() {
  zero_grads();
  local_loss_ = 0.0;
  placement_ok_ = true;
  layer_placement_.assign(static_cast<std::size_t>(model_.layers), 1);

  const int layers = model_.layers;
  const bool ckpt = opts_.flags.ckpt;
  const bool record = ckpt && opts_.flags.cac;

  acts_.clear();
  ckpt_x_.clear();
  if (ckpt) {
    ckpt_x_.resize(static_cast<std::size_t>(layers));
  } else {
    acts_.resize(static_cast<std::size_t>(layers));
  }
  stash_.assign(static_cast<std::size_t>(layers), CommStash{});
  ckpt_now_ = 0;
  stash_now_ = 0;

  Tensor x = batch_;
  for (int l = 0; l < layers; ++l) {
    channel_.begin(Phase::Forward, record ? CollectiveChannel::Mode::Record
                                          : CollectiveChannel::Mode::Live,
                   record ? &stash_[static_cast<std::size_t>(l)] : nullptr);
    Tensor y;
    if (ckpt) {
      ckpt_x_[static_cast<std::size_t>(l)] = x;
      ckpt_now_ += x.accounted_bytes();
      ckpt_peak_ = std::max(ckpt_peak_, ckpt_now_);
      LayerActs scratch;
      y = forward_layer(l, x, scratch);
    } else {
      y = forward_layer(l, x, acts_[static_cast<std::size_t>(l)]);
    }
    if (record) {
      stash_now_ += stash_[static_cast<std::size_t>(l)].accounted_bytes();
      stash_peak_ = std::max(stash_peak_, stash_now_);
    }
    x = std::move(y);
  }
  y_final_ = std::move(x);

  double acc = 0.0;
  for (double v : y_final_.data) acc += v * v;
  local_loss_ = acc / (2.0 * static_cast<double>(global_tokens_));
  return local_loss_;
}

void MoeRank::run_backward() {
  const int layers = model_.layers;
  const bool ckpt = opts_.flags.ckpt;
  const bool cac = ckpt && opts_.flags.cac;

  Tensor dy = y_final_;
  for (double& v : dy.data) v /= static_cast<double>(global_tokens_);

  for (int l = layers - 1; l >= 0; --l) {
    LayerActs scratch;
    const LayerActs* acts = nullptr;
    if (ckpt) {
      channel_.begin(Phase::Recompute, cac ? CollectiveChannel::Mode::Replay
                                           : CollectiveChannel::Mode::Live,
                     &stash_[static_cast<std::size_t>(l)]);
      forward_layer(l, ckpt_x_[static_cast<std::size_t>(l)], scratch);
      acts = &scratch;
    } else {
      acts = &acts_[static_cast<std::size_t>(l)];
    }
    channel_.begin(Phase::Backward, CollectiveChannel::Mode::Live, nullptr);
    dy = backward_layer(l, *acts, dy);
    if (ckpt) {
      ckpt_now_ -= ckpt_x_[static_cast<std::size_t>(l)].accounted_bytes();
      ckpt_x_[static_cast<std::size_t>(l)] = Tensor{};
    }
    if (cac) {
      stash_now_ -= stash_[static_cast<std::size_t>(l)].accounted_bytes();
      stash_[static_cast<std::size_t>(l)].clear();
    }
  }
}

Tensor MoeRank::forward_layer(int layer, const Tensor& x, LayerActs& A) {
  const LayerSlots& S = slots_[static_cast<std::size_t>(layer)];
  const std::int64_t h = model_.hidden;

  A.x = x;
  A.z1 = column_parallel_forward(x, params_[S.attn.w1].value, params_[S.attn.b1].value);
  A.h1 = gelu_forward(A.z1);
  A.a = row_parallel_forward(channel_, tensor_g_, A.h1, params_[S.attn.w2].value,
                             params_[S.attn.b2].value);

  if (!S.moe) {
    A.fz1 = column_parallel_forward(A.a, params_[S.ffn.w1].value, params_[S.ffn.b1].value);
    A.fh1 = gelu_forward(A.fz1);
    return row_parallel_forward(channel_, tensor_g_, A.fh1, params_[S.ffn.w2].value,
                                params_[S.ffn.b2].value);
  }

  A.gate = gate_forward(A.a, params_[S.gate].value);

  const int n = model_.tokens_per_shard;
  const int T = topo_.tensor_parallel;
  const int E = topo_.experts;
  const bool drop = opts_.flags.dtd && T > 1;

  // Tensor-group peers hold identical token rows, so under the drop
  // optimization each peer dispatches only its own contiguous chunk.
  A.kept.clear();
  if (drop) {
    const int chunk = n / T;
    int c = coords_.tensor;
    if (opts_.flags.corrupt_drop) c = (c + 1) % T;
    for (int k = c * chunk; k < (c + 1) * chunk; ++k) A.kept.push_back(k);
  } else {
    for (int k = 0; k < n; ++k) A.kept.push_back(k);
  }

  std::vector<std::vector<double>> segments(static_cast<std::size_t>(E));
  A.send_counts.assign(static_cast<std::size_t>(E), 0);
  for (int k : A.kept) {
    const int e = A.gate.expert_of[static_cast<std::size_t>(k)];
    const double* row = A.a.data.data() + static_cast<std::int64_t>(k) * h;
    segments[static_cast<std::size_t>(e)].insert(segments[static_cast<std::size_t>(e)].end(),
                                                 row, row + h);
    A.send_counts[static_cast<std::size_t>(e)] += 1;
  }
  auto received = channel_.all_to_all_v(expert_g_, std::move(segments), StorageWidth::Half);

  A.recv_counts.assign(static_cast<std::size_t>(E), 0);
  std::vector<double> own_flat;
  std::int64_t own_len = 0;
  for (int src = 0; src < E; ++src) {
    const auto& seg = received[static_cast<std::size_t>(src)];
    if (seg.size() % static_cast<std::size_t>(h) != 0) {
      throw ProtocolError("dispatch returned a partial activation row");
    }
    A.recv_counts[static_cast<std::size_t>(src)] = static_cast<int>(seg.size() / h);
    own_len += static_cast<std::int64_t>(seg.size() / h);
    own_flat.insert(own_flat.end(), seg.begin(), seg.end());
  }

  if (drop) {
    // Peers received disjoint slices of this expert's token set; gather and
    // concatenate them in member order to rebuild the full set.
    auto blocks = channel_.all_gather_v(tensor_g_, std::move(own_flat), StorageWidth::Half);
    A.own_offset = 0;
    std::vector<double> flat;
    for (int t = 0; t < static_cast<int>(blocks.size()); ++t) {
      if (t < coords_.tensor) A.own_offset += static_cast<std::int64_t>(blocks[t].size()) / h;
      flat.insert(flat.end(), blocks[static_cast<std::size_t>(t)].begin(),
                  blocks[static_cast<std::size_t>(t)].end());
    }
    A.assembled = tensor_from_flat(std::move(flat), h, StorageWidth::Half);
  } else {
    A.own_offset = 0;
    A.assembled = tensor_from_flat(std::move(own_flat), h, StorageWidth::Half);
  }

  A.ez1 = column_parallel_forward(A.assembled, params_[S.expert.w1].value,
                                  params_[S.expert.b1].value);
  A.eh1 = gelu_forward(A.ez1);
  const Tensor fe = row_parallel_forward(channel_, tensor_g_, A.eh1, params_[S.expert.w2].value,
                                         params_[S.expert.b2].value);

  // Return trip: each rank sends back only the block it originally received,
  // split by source exactly as it arrived.
  const Tensor out_block = drop ? rows_range(fe, A.own_offset, own_len) : fe;
  std::vector<std::vector<double>> back_segments(static_cast<std::size_t>(E));
  {
    std::int64_t at = 0;
    for (int src = 0; src < E; ++src) {
      const std::int64_t len = static_cast<std::int64_t>(A.recv_counts[static_cast<std::size_t>(src)]) * h;
      back_segments[static_cast<std::size_t>(src)].assign(out_block.data.begin() + at,
                                                          out_block.data.begin() + at + len);
      at += len;
    }
  }
  auto returned = channel_.all_to_all_v(expert_g_, std::move(back_segments), StorageWidth::Half);

  Tensor kept_f = Tensor::zeros({static_cast<std::int64_t>(A.kept.size()), h});
  {
    std::vector<std::int64_t> cursor(static_cast<std::size_t>(E), 0);
    for (std::size_t i = 0; i < A.kept.size(); ++i) {
      const int e = A.gate.expert_of[static_cast<std::size_t>(A.kept[i])];
      auto& seg = returned[static_cast<std::size_t>(e)];
      if ((cursor[static_cast<std::size_t>(e)] + 1) * h > static_cast<std::int64_t>(seg.size())) {
        throw ProtocolError("token round trip returned fewer rows than were dispatched");
      }
      std::copy(seg.begin() + cursor[static_cast<std::size_t>(e)] * h,
                seg.begin() + (cursor[static_cast<std::size_t>(e)] + 1) * h,
                kept_f.data.begin() + static_cast<std::int64_t>(i) * h);
      cursor[static_cast<std::size_t>(e)] += 1;
    }
  }

  if (drop) {
    auto chunks = channel_.all_gather_v(tensor_g_, std::move(kept_f.data), StorageWidth::Half);
    std::vector<double> flat;
    for (auto& c : chunks) flat.insert(flat.end(), c.begin(), c.end());
    A.f_home = tensor_from_flat(std::move(flat), h, StorageWidth::Half);
    if (A.f_home.rows() != n) {
      throw ProtocolError("token round trip produced " + std::to_string(A.f_home.rows()) +
                          " rows for " + std::to_string(n) + " tokens");
    }
    // Member t's block lands at slot [t*n/T, (t+1)*n/T); the round trip only
    // restores token order if the kept chunk matches that slot.
    const int chunk = n / T;
    bool ok = static_cast<int>(A.kept.size()) == chunk;
    for (std::size_t i = 0; ok && i < A.kept.size(); ++i) {
      if (A.kept[i] != coords_.tensor * chunk + static_cast<int>(i)) ok = false;
    }
    A.placement_ok = ok;
  } else {
    A.f_home = std::move(kept_f);
    A.placement_ok = true;
  }
  if (!A.placement_ok) placement_ok_ = false;
  if (static_cast<std::size_t>(layer) < layer_placement_.size()) {
    layer_placement_[static_cast<std::size_t>(layer)] = A.placement_ok ? 1 : 0;
  }

  Tensor y = Tensor::zeros({static_cast<std::int64_t>(n), h});
  for (int k = 0; k < n; ++k) {
    const double p = A.gate.chosen_prob[static_cast<std::size_t>(k)];
    for (std::int64_t j = 0; j < h; ++j) y.at(k, j) = p * A.f_home.at(k, j);
  }
  return y;
}

Tensor MoeRank::backward_layer(int layer, const LayerActs& A, const Tensor& dy) {
  const LayerSlots& S = slots_[static_cast<std::size_t>(layer)];
  const std::int64_t h = model_.hidden;
  Tensor da_total;

  if (!S.moe) {
    ParallelLinearGrads rb = row_parallel_backward(A.fh1, params_[S.ffn.w2].value, dy);
    accumulate(params_[S.ffn.w2].grad, rb.dw);
    accumulate(params_[S.ffn.b2].grad, rb.db);
    const Tensor dfz1 = gelu_backward(A.fz1, rb.dx);
    ParallelLinearGrads cb = column_parallel_backward(channel_, tensor_g_, A.a,
                                                      params_[S.ffn.w1].value, dfz1);
    accumulate(params_[S.ffn.w1].grad, cb.dw);
    accumulate(params_[S.ffn.b1].grad, cb.db);
    da_total = std::move(cb.dx);
  } else {
    const int n = model_.tokens_per_shard;
    const int T = topo_.tensor_parallel;
    const int E = topo_.experts;
    const bool drop = opts_.flags.dtd && T > 1;

    Tensor df_home = Tensor::zeros({static_cast<std::int64_t>(n), h});
    std::vector<double> dchosen(static_cast<std::size_t>(n), 0.0);
    for (int k = 0; k < n; ++k) {
      const double p = A.gate.chosen_prob[static_cast<std::size_t>(k)];
      double d = 0.0;
      for (std::int64_t j = 0; j < h; ++j) {
        df_home.at(k, j) = p * dy.at(k, j);
        d += A.f_home.at(k, j) * dy.at(k, j);
      }
      dchosen[static_cast<std::size_t>(k)] = d;
    }
    GateGrads gg = gate_backward(A.a, params_[S.gate].value, A.gate, dchosen);
    accumulate(params_[S.gate].grad, gg.dweight);

    // Undo the home-side gather: this member contributed the slot starting
    // at tensor-coordinate * chunk, so it takes exactly those gradient rows.
    const Tensor df_kept =
        drop ? rows_range(df_home, static_cast<std::int64_t>(coords_.tensor) * (n / T), n / T)
             : df_home;

    std::vector<std::vector<double>> segments(static_cast<std::size_t>(E));
    for (std::size_t i = 0; i < A.kept.size(); ++i) {
      const int e = A.gate.expert_of[static_cast<std::size_t>(A.kept[i])];
      const double* row = df_kept.data.data() + static_cast<std::int64_t>(i) * h;
      segments[static_cast<std::size_t>(e)].insert(segments[static_cast<std::size_t>(e)].end(),
                                                   row, row + h);
    }
    auto recvd = channel_.all_to_all_v(expert_g_, std::move(segments), StorageWidth::Half);
    std::vector<double> dfe_own;
    for (int src = 0; src < E; ++src) {
      const auto& seg = recvd[static_cast<std::size_t>(src)];
      if (static_cast<std::int64_t>(seg.size()) !=
          static_cast<std::int64_t>(A.recv_counts[static_cast<std::size_t>(src)]) * h) {
        throw ProtocolError("return-trip gradient counts disagree with the dispatch record");
      }
      dfe_own.insert(dfe_own.end(), seg.begin(), seg.end());
    }
    Tensor dfe;
    if (drop) {
      auto blocks = channel_.all_gather_v(tensor_g_, std::move(dfe_own), StorageWidth::Half);
      std::vector<double> flat;
      for (auto& b : blocks) flat.insert(flat.end(), b.begin(), b.end());
      dfe = tensor_from_flat(std::move(flat), h, StorageWidth::Half);
    } else {
      dfe = tensor_from_flat(std::move(dfe_own), h, StorageWidth::Half);
    }
    if (dfe.rows() != A.assembled.rows()) {
      throw ProtocolError("expert output gradient rows disagree with the forward assembly");
    }

    ParallelLinearGrads rb = row_parallel_backward(A.eh1, params_[S.expert.w2].value, dfe);
    accumulate(params_[S.expert.w2].grad, rb.dw);
    accumulate(params_[S.expert.b2].grad, rb.db);
    const Tensor dez1 = gelu_backward(A.ez1, rb.dx);
    ParallelLinearGrads cb = column_parallel_backward(channel_, tensor_g_, A.assembled,
                                                      params_[S.expert.w1].value, dez1);
    accumulate(params_[S.expert.w1].grad, cb.dw);
    accumulate(params_[S.expert.b1].grad, cb.db);

    std::int64_t own_len = 0;
    for (int c : A.recv_counts) own_len += c;
    const Tensor d_own = drop ? rows_range(cb.dx, A.own_offset, own_len) : std::move(cb.dx);
    std::vector<std::vector<double>> seg1(static_cast<std::size_t>(E));
    {
      std::int64_t at = 0;
      for (int src = 0; src < E; ++src) {
        const std::int64_t len =
            static_cast<std::int64_t>(A.recv_counts[static_cast<std::size_t>(src)]) * h;
        seg1[static_cast<std::size_t>(src)].assign(d_own.data.begin() + at,
                                                   d_own.data.begin() + at + len);
        at += len;
      }
    }
    auto back = channel_.all_to_all_v(expert_g_, std::move(seg1), StorageWidth::Half);
    Tensor da_kept = Tensor::zeros({static_cast<std::int64_t>(A.kept.size()), h});
    {
      std::vector<std::int64_t> cursor(static_cast<std::size_t>(E), 0);
      for (std::size_t i = 0; i < A.kept.size(); ++i) {
        const int e = A.gate.expert_of[static_cast<std::size_t>(A.kept[i])];
        auto& seg = back[static_cast<std::size_t>(e)];
        if ((cursor[static_cast<std::size_t>(e)] + 1) * h > static_cast<std::int64_t>(seg.size())) {
          throw ProtocolError("dispatch gradient counts disagree with the routing record");
        }
        std::copy(seg.begin() + cursor[static_cast<std::size_t>(e)] * h,
                  seg.begin() + (cursor[static_cast<std::size_t>(e)] + 1) * h,
                  da_kept.data.begin() + static_cast<std::int64_t>(i) * h);
        cursor[static_cast<std::size_t>(e)] += 1;
      }
    }
    Tensor da_dispatch;
    if (drop) {
      auto chunks = channel_.all_gather_v(tensor_g_, std::move(da_kept.data), StorageWidth::Half);
      std::vector<double> flat;
      for (auto& c : chunks) flat.insert(flat.end(), c.begin(), c.end());
      da_dispatch = tensor_from_flat(std::move(flat), h, StorageWidth::Half);
    } else {
      da_dispatch = std::move(da_kept);
    }
    da_total = add_tensors(da_dispatch, gg.dinput);
  }

  ParallelLinearGrads rb2 = row_parallel_backward(A.h1, params_[S.attn.w2].value, da_total);
  accumulate(params_[S.attn.w2].grad, rb2.dw);
  accumulate(params_[S.attn.b2].grad, rb2.db);
  const Tensor dz1 = gelu_backward(A.z1, rb2.dx);
  ParallelLinearGrads cb2 = column_parallel_backward(channel_, tensor_g_, A.x,
                                                     params_[S.attn.w1].value, dz1);
  accumulate(params_[S.attn.w1].grad, cb2.dw);
  accumulate(params_[S.attn.b1].grad, cb2.db);
  return std::move(cb2.dx);
}

void MoeRank::run_grad_sync() {
  channel_.begin(Phase::GradSync, CollectiveChannel::Mode::Live, nullptr);
  if (nonexp_data_g_.size() > 1) {
    std::vector<double> flat = flatten_family(false, true);
    flat = channel_.all_reduce(nonexp_data_g_, std::move(flat), StorageWidth::Half);
    unflatten_family(false, flat, true);
  }
  if (exp_data_g_.size() > 1) {
    std::vector<double> flat = flatten_family(true, true);
    flat = channel_.all_reduce(exp_data_g_, std::move(flat), StorageWidth::Half);
    unflatten_family(true, flat, true);
  }
}

void MoeRank::family_optimizer_step(bool expert_owned, OptimizerShard& opt, const Group& group) {
  if (reset_masters_) opt.reset_master(flatten_family(expert_owned, false));
  const std::vector<double> grads = flatten_family(expert_owned, true);
  std::vector<double> updated = flatten_family(expert_owned, false);
  opt.step_owned(grads, updated);
  if (opt.group_size > 1) {
    // Completion: everyone contributes an equal, zero-padded chunk so the
    // plain all-gather applies; padding is accounted like any payload.
    const std::int64_t total = opt.family_elems;
    const std::int64_t chunk = (total + opt.group_size - 1) / opt.group_size;
    std::vector<double> mine(static_cast<std::size_t>(chunk), 0.0);
    std::copy(updated.begin() + opt.owned.begin, updated.begin() + opt.owned.end, mine.begin());
    const std::vector<double> cat =
        fabric_->all_gather(group, rank_, std::move(mine), Phase::Optim, StorageWidth::Half);
    for (int p = 0; p < opt.group_size; ++p) {
      const ShardRange r = shard_range(total, opt.group_size, p);
      std::copy(cat.begin() + p * chunk, cat.begin() + p * chunk + r.size(),
                updated.begin() + r.begin);
    }
  }
  unflatten_family(expert_owned, updated, false);
}

void MoeRank::run_optimizer_step() {
  channel_.begin(Phase::Optim, CollectiveChannel::Mode::Live, nullptr);
  family_optimizer_step(false, opt_nonexp_, nonexp_data_g_);
  family_optimizer_step(true, opt_exp_, exp_data_g_);
  reset_masters_ = false;
}

MemoryReport MoeRank::memory_report() const {
  MemoryReport r;
  for (const Parameter& p : params_) {
    r.params_bytes += p.value.accounted_bytes();
    r.grads_bytes += p.grad.accounted_bytes();
  }
  r.optimizer_state_bytes = opt_nonexp_.state_bytes() + opt_exp_.state_bytes();
  r.upcast_peak_bytes = std::max(opt_nonexp_.upcast_peak_bytes, opt_exp_.upcast_peak_bytes);
  r.cac_stash_peak_bytes = stash_peak_;
  r.checkpoint_peak_bytes = ckpt_peak_;
  return r;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const MoeModelConfig& model, const TedConfig& topo, TrainerOptions opts)
    : model_(model), opts_(opts), fabric_(topo.world_size) {
  validate_model(model_);
  if (topo.experts != model_.experts) {
    throw InvalidConfigError("topology expert degree (" + std::to_string(topo.experts) +
                             ") must equal the model expert count (" +
                             std::to_string(model_.experts) + ")");
  }
  topo_ = derive_config(topo.world_size, topo.tensor_parallel, topo.experts);
  const int T = topo_.tensor_parallel;
  if ((kFfnMultiple * model_.hidden) % T != 0) {
    throw InvalidConfigError("tensor_parallel (" + std::to_string(T) +
                             ") does not divide the block inner width (" +
                             std::to_string(kFfnMultiple * model_.hidden) + ")");
  }
  opts_.flags.cac = opts_.flags.cac && opts_.flags.ckpt;
  if (opts_.flags.dtd && T > 1 && model_.tokens_per_shard % T != 0) {
    throw InvalidConfigError("token dropping needs tensor_parallel (" + std::to_string(T) +
                             ") to divide tokens_per_shard (" +
                             std::to_string(model_.tokens_per_shard) + ")");
  }
  fabric_.set_collective_timeout(opts_.collective_timeout);

  groups_ = build_groups(topo_);
  for (auto& m : groups_.tensor_groups) fab_tensor_.push_back(fabric_.new_group(m, GroupKind::Tensor));
  for (auto& m : groups_.expert_groups) fab_expert_.push_back(fabric_.new_group(m, GroupKind::Expert));
  for (auto& m : groups_.exp_data_groups) {
    fab_exp_data_.push_back(fabric_.new_group(m, GroupKind::DataExp));
  }
  for (auto& m : groups_.nonexp_data_groups) {
    fab_nonexp_data_.push_back(fabric_.new_group(m, GroupKind::DataNonexp));
  }

  ranks_.reserve(static_cast<std::size_t>(topo_.world_size));
  for (RankId r = 0; r < topo_.world_size; ++r) {
    const RankGroups idx = groups_for_rank(groups_, r);
    ranks_.push_back(std::make_unique<MoeRank>(
        model_, topo_, r, &fabric_, fab_tensor_[static_cast<std::size_t>(idx.tensor)],
        fab_expert_[static_cast<std::size_t>(idx.expert)],
        fab_exp_data_[static_cast<std::size_t>(idx.exp_data)],
        fab_nonexp_data_[static_cast<std::size_t>(idx.nonexp_data)], opts_));
  }
}

MoeRank& Trainer::rank(RankId r) {
  if (r < 0 || r >= static_cast<RankId>(ranks_.size())) {
    throw InvalidConfigError("rank " + std::to_string(r) + " outside [0, " +
                             std::to_string(ranks_.size()) + ")");
  }
  return *ranks_[static_cast<std::size_t>(r)];
}

std::int64_t Trainer::global_tokens() const {
  return static_cast<std::int64_t>(model_.tokens_per_shard) * topo_.experts *
         topo_.expert_data_parallel;
}

namespace {

StepReport collect_report(const TedConfig& topo,
                          const std::vector<std::unique_ptr<MoeRank>>& ranks) {
  StepReport rep;
  const int shards = topo.experts * topo.expert_data_parallel;
  rep.shard_losses.resize(static_cast<std::size_t>(shards));
  for (int i = 0; i < shards; ++i) {
    const int e = i % topo.experts;
    const int d = i / topo.experts;
    rep.shard_losses[static_cast<std::size_t>(i)] =
        ranks[static_cast<std::size_t>(rank_at(topo, 0, e, d))]->local_loss();
  }
  double acc = 0.0;
  for (double v : rep.shard_losses) acc += v;
  rep.loss = acc;
  return rep;
}

}  // namespace

StepReport Trainer::step() {
  run_ranks(topo_.world_size, [&](RankId r) {
    MoeRank& m = *ranks_[static_cast<std::size_t>(r)];
    m.run_forward();
    m.run_backward();
    m.run_grad_sync();
    m.run_optimizer_step();
  });
  return collect_report(topo_, ranks_);
}

StepReport Trainer::forward_only() {
  run_ranks(topo_.world_size,
            [&](RankId r) { ranks_[static_cast<std::size_t>(r)]->run_forward(); });
  return collect_report(topo_, ranks_);
}

std::map<std::string, Tensor> Trainer::assemble(bool grads) {
  std::map<std::string, Tensor> out;
  const int T = topo_.tensor_parallel;
  for (const ParamDesc& desc : enumerate_params(model_)) {
    std::vector<const Tensor*> parts;
    parts.reserve(static_cast<std::size_t>(T));
    const int e = desc.expert_index >= 0 ? desc.expert_index : 0;
    for (int t = 0; t < T; ++t) {
      const Parameter& p = ranks_[static_cast<std::size_t>(rank_at(topo_, t, e, 0))]->param(desc.name);
      parts.push_back(grads ? &p.grad : &p.value);
    }
    out.emplace(desc.name, assemble_full(desc, parts));
  }
  return out;
}

std::map<std::string, Tensor> Trainer::full_parameters() { return assemble(false); }

std::map<std::string, Tensor> Trainer::full_gradients() { return assemble(true); }

void Trainer::set_parameter(const std::string& name, const Tensor& full_value) {
  bool found = false;
  for (auto& rank : ranks_) {
    if (rank->find_param(name) != nullptr) {
      rank->set_param_value(name, full_value);
      found = true;
    }
  }
  if (!found) {
    throw InvalidConfigError("no parameter named " + name + " in the model");
  }
}

bool Trainer::placement_ok() const {
  for (const auto& rank : ranks_) {
    if (!rank->placement_ok()) return false;
  }
  return true;
}

MemoryReport Trainer::memory_report(RankId r) { return rank(r).memory_report(); }

// ---------------------------------------------------------------------------
// SerialModel

SerialModel::SerialModel(const MoeModelConfig& model, int data_shards, TrainerOptions opts)
    : model_(model), opts_(opts), data_shards_(data_shards) {
  validate_model(model_);
  if (data_shards_ < 1) {
    throw InvalidConfigError("data_shards must be >= 1, got " + std::to_string(data_shards_));
  }
  global_tokens_ = static_cast<std::int64_t>(model_.tokens_per_shard) * data_shards_;

  for (const ParamDesc& d : enumerate_params(model_)) {
    params_.push_back(make_parameter(d, model_.seed, ShardSpec::full()));
    param_index_[d.name] = static_cast<int>(params_.size()) - 1;
  }
  auto idx = [&](const std::string& name) {
    auto it = param_index_.find(name);
    return it == param_index_.end() ? -1 : it->second;
  };
  slots_.resize(static_cast<std::size_t>(model_.layers));
  for (int l = 0; l < model_.layers; ++l) {
    LayerSlots& S = slots_[static_cast<std::size_t>(l)];
    const std::string lp = "layer" + std::to_string(l);
    S.attn = {idx(lp + ".attn.w1"), idx(lp + ".attn.b1"), idx(lp + ".attn.w2"),
              idx(lp + ".attn.b2")};
    S.moe = layer_has_experts(l);
    if (S.moe) {
      S.gate = idx(lp + ".gate.w");
      for (int e = 0; e < model_.experts; ++e) {
        const std::string ep = lp + ".expert" + std::to_string(e);
        S.experts.push_back({idx(ep + ".w1"), idx(ep + ".b1"), idx(ep + ".w2"), idx(ep + ".b2")});
      }
    } else {
      S.ffn = {idx(lp + ".ffn.w1"), idx(lp + ".ffn.b1"), idx(lp + ".ffn.w2"),
               idx(lp + ".ffn.b2")};
    }
  }

  batch_ = seeded_init({global_tokens_, model_.hidden}, mix_seed(model_.seed, "batch"), 1.0);
}

Parameter& SerialModel::param(const std::string& name) {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) {
    throw InvalidConfigError("no parameter named " + name);
  }
  return params_[static_cast<std::size_t>(it->second)];
}

void SerialModel::set_parameter(const std::string& name, const Tensor& full_value) {
  Parameter& p = param(name);
  if (full_value.shape != p.desc.shape) {
    throw InvalidConfigError("assigned tensor shape does not match parameter " + name);
  }
  p.value = full_value;
  p.value.width = StorageWidth::Half;
  p.grad = Tensor::zeros(p.value.shape, p.value.width);
  opt_ready_ = false;
}

void SerialModel::zero_grads() {
  for (Parameter& p : params_) p.grad = Tensor::zeros(p.value.shape, p.value.width);
}

double SerialModel::forward_only() {
  zero_grads();
  acts_.assign(static_cast<std::size_t>(model_.layers), SerialLayerActs{});
  Tensor x = batch_;
  for (int l = 0; l < model_.layers; ++l) {
    x = forward_layer(l, x, acts_[static_cast<std::size_t>(l)]);
  }
  y_final_ = std::move(x);
  double acc = 0.0;
  for (double v : y_final_.data) acc += v * v;
  return acc / (2.0 * static_cast<double>(global_tokens_));
}

Tensor SerialModel::forward_layer(int layer, const Tensor& x, SerialLayerActs& A) {
  const LayerSlots& S = slots_[static_cast<std::size_t>(layer)];
  const std::int64_t h = model_.hidden;
  const std::int64_t tokens = global_tokens_;

  A.x = x;
  A.z1 = linear_forward(x, params_[S.attn.w1].value, params_[S.attn.b1].value);
  A.h1 = gelu_forward(A.z1);
  A.a = linear_forward(A.h1, params_[S.attn.w2].value, params_[S.attn.b2].value);

  if (!S.moe) {
    A.fz1 = linear_forward(A.a, params_[S.ffn.w1].value, params_[S.ffn.b1].value);
    A.fh1 = gelu_forward(A.fz1);
    return linear_forward(A.fh1, params_[S.ffn.w2].value, params_[S.ffn.b2].value);
  }

  A.gate = gate_forward(A.a, params_[S.gate].value);
  const int E = model_.experts;
  A.expert_rows.assign(static_cast<std::size_t>(E), {});
  for (std::int64_t k = 0; k < tokens; ++k) {
    A.expert_rows[static_cast<std::size_t>(A.gate.expert_of[static_cast<std::size_t>(k)])]
        .push_back(static_cast<int>(k));
  }
  A.ez1.assign(static_cast<std::size_t>(E), Tensor{});
  A.eh1.assign(static_cast<std::size_t>(E), Tensor{});
  A.f_home = Tensor::zeros({tokens, h});
  for (int e = 0; e < E; ++e) {
    const Slots& es = S.experts[static_cast<std::size_t>(e)];
    const Tensor xe = rows_subset(A.a, A.expert_rows[static_cast<std::size_t>(e)]);
    A.ez1[static_cast<std::size_t>(e)] =
        linear_forward(xe, params_[es.w1].value, params_[es.b1].value);
    A.eh1[static_cast<std::size_t>(e)] = gelu_forward(A.ez1[static_cast<std::size_t>(e)]);
    const Tensor fe = linear_forward(A.eh1[static_cast<std::size_t>(e)], params_[es.w2].value,
                                     params_[es.b2].value);
    scatter_rows(A.f_home, A.expert_rows[static_cast<std::size_t>(e)], fe);
  }

  Tensor y = Tensor::zeros({tokens, h});
  for (std::int64_t k = 0; k < tokens; ++k) {
    const double p = A.gate.chosen_prob[static_cast<std::size_t>(k)];
    for (std::int64_t j = 0; j < h; ++j) y.at(k, j) = p * A.f_home.at(k, j);
  }
  return y;
}

Tensor SerialModel::backward_layer(int layer, const SerialLayerActs& A, const Tensor& dy) {
  const LayerSlots& S = slots_[static_cast<std::size_t>(layer)];
  const std::int64_t h = model_.hidden;
  const std::int64_t tokens = global_tokens_;
  Tensor da_total;

  if (!S.moe) {
    LinearGrads rb = linear_backward(A.fh1, params_[S.ffn.w2].value, dy);
    accumulate(params_[S.ffn.w2].grad, rb.dw);
    accumulate(params_[S.ffn.b2].grad, rb.db);
    const Tensor dfz1 = gelu_backward(A.fz1, rb.dx);
    LinearGrads cb = linear_backward(A.a, params_[S.ffn.w1].value, dfz1);
    accumulate(params_[S.ffn.w1].grad, cb.dw);
    accumulate(params_[S.ffn.b1].grad, cb.db);
    da_total = std::move(cb.dx);
  } else {
    Tensor df_home = Tensor::zeros({tokens, h});
    std::vector<double> dchosen(static_cast<std::size_t>(tokens), 0.0);
    for (std::int64_t k = 0; k < tokens; ++k) {
      const double p = A.gate.chosen_prob[static_cast<std::size_t>(k)];
      double d = 0.0;
      for (std::int64_t j = 0; j < h; ++j) {
        df_home.at(k, j) = p * dy.at(k, j);
        d += A.f_home.at(k, j) * dy.at(k, j);
      }
      dchosen[static_cast<std::size_t>(k)] = d;
    }
    GateGrads gg = gate_backward(A.a, params_[S.gate].value, A.gate, dchosen);
    accumulate(params_[S.gate].grad, gg.dweight);

    Tensor da_dispatch = Tensor::zeros({tokens, h});
    for (int e = 0; e < model_.experts; ++e) {
      const Slots& es = S.experts[static_cast<std::size_t>(e)];
      const std::vector<int>& rows = A.expert_rows[static_cast<std::size_t>(e)];
      const Tensor dfe = rows_subset(df_home, rows);
      LinearGrads rb = linear_backward(A.eh1[static_cast<std::size_t>(e)], params_[es.w2].value,
                                       dfe);
      accumulate(params_[es.w2].grad, rb.dw);
      accumulate(params_[es.b2].grad, rb.db);
      const Tensor dez1 = gelu_backward(A.ez1[static_cast<std::size_t>(e)], rb.dx);
      const Tensor xe = rows_subset(A.a, rows);
      LinearGrads cb = linear_backward(xe, params_[es.w1].value, dez1);
      accumulate(params_[es.w1].grad, cb.dw);
      accumulate(params_[es.b1].grad, cb.db);
      scatter_rows(da_dispatch, rows, cb.dx);
    }
    da_total = add_tensors(da_dispatch, gg.dinput);
  }

  LinearGrads rb2 = linear_backward(A.h1, params_[S.attn.w2].value, da_total);
  accumulate(params_[S.attn.w2].grad, rb2.dw);
  accumulate(params_[S.attn.b2].grad, rb2.db);
  const Tensor dz1 = gelu_backward(A.z1, rb2.dx);
  LinearGrads cb2 = linear_backward(A.x, params_[S.attn.w1].value, dz1);
  accumulate(params_[S.attn.w1].grad, cb2.dw);
  accumulate(params_[S.attn.b1].grad, cb2.db);
  return std::move(cb2.dx);
}

StepReport SerialModel::step() {
  const double loss = forward_only();

  Tensor dy = y_final_;
  for (double& v : dy.data) v /= static_cast<double>(global_tokens_);
  for (int l = model_.layers - 1; l >= 0; --l) {
    dy = backward_layer(l, acts_[static_cast<std::size_t>(l)], dy);
  }

  std::vector<double> values;
  std::vector<double> grads;
  for (const Parameter& p : params_) {
    values.insert(values.end(), p.value.data.begin(), p.value.data.end());
    grads.insert(grads.end(), p.grad.data.begin(), p.grad.data.end());
  }
  if (!opt_ready_) {
    opt_ = OptimizerShard::create(values, 1, 0, opts_.adam, opts_.tiles);
    opt_ready_ = true;
  }
  std::vector<double> updated = values;
  opt_.step_owned(grads, updated);
  std::size_t at = 0;
  for (Parameter& p : params_) {
    std::copy(updated.begin() + static_cast<std::ptrdiff_t>(at),
              updated.begin() + static_cast<std::ptrdiff_t>(at + p.value.data.size()),
              p.value.data.begin());
    at += p.value.data.size();
  }

  StepReport rep;
  rep.loss = loss;
  rep.shard_losses.resize(static_cast<std::size_t>(data_shards_));
  const std::int64_t n = model_.tokens_per_shard;
  const std::int64_t cols = y_final_.cols();
  for (int s = 0; s < data_shards_; ++s) {
    double acc = 0.0;
    const std::int64_t begin = static_cast<std::int64_t>(s) * n * cols;
    const std::int64_t end = begin + n * cols;
    for (std::int64_t i = begin; i < end; ++i) acc += y_final_.data[static_cast<std::size_t>(i)] *
                                                      y_final_.data[static_cast<std::size_t>(i)];
    rep.shard_losses[static_cast<std::size_t>(s)] =
        acc / (2.0 * static_cast<double>(global_tokens_));
  }
  return rep;
}

}  // namespace tedsim
