// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tedsim/channel.hpp"
#include "tedsim/nn.hpp"

namespace tedsim {

// Tensor-parallel linear layers in the classic column/row pairing. A block
//
//   y = row(gelu(column(x)))
//
// communicates exactly twice per direction: the row output is all-reduced in
// the forward pass, and the column input gradient is all-reduced in the
// backward pass. Weight and bias gradients never cross ranks here; the data
// groups reconcile them during grad sync.

struct ParallelLinearGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};

// Column split: full input, each rank computes its slice of the outputs.
// No communication; every rank holds the same x.
Tensor column_parallel_forward(const Tensor& x_full, const Tensor& w_shard,
                               const Tensor& b_shard);

// dx needs the sum of every shard's contribution, hence the all-reduce.
ParallelLinearGrads column_parallel_backward(CollectiveChannel& comm, const Group& tensor_group,
                                             const Tensor& x_full, const Tensor& w_shard,
                                             const Tensor& dy_shard);

// Row split: sharded input, partial products summed by all-reduce; the bias
// is replicated and added once after the reduction.
Tensor row_parallel_forward(CollectiveChannel& comm, const Group& tensor_group,
                            const Tensor& x_shard, const Tensor& w_shard, const Tensor& b_full);

// The full dy is already on every rank, so the backward is communication-free.
ParallelLinearGrads row_parallel_backward(const Tensor& x_shard, const Tensor& w_shard,
                                          const Tensor& dy_full);

}  // namespace tedsim
