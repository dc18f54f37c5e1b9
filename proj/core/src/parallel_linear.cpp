// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/parallel_linear.hpp"

namespace tedsim {

Tensor column_parallel_forward(const Tensor& x_full, const Tensor& w_shard,
                               const Tensor& b_shard) {
  return linear_forward(x_full, w_shard, b_shard);
}

ParallelLinearGrads column_parallel_backward(CollectiveChannel& comm, const Group& tensor_group,
                                             const Tensor& x_full, const Tensor& w_shard,
                                             const Tensor& dy_shard) {
  ParallelLinearGrads g;
  Tensor dx_partial = matmul_nt(dy_shard, w_shard);
  g.dx = dx_partial;
  g.dx.data = comm.all_reduce(tensor_group, std::move(dx_partial.data), dx_partial.width);
  g.dw = matmul_tn(x_full, dy_shard);
  g.db = colsum(dy_shard);
  return g;
}

Tensor row_parallel_forward(CollectiveChannel& comm, const Group& tensor_group,
                            const Tensor& x_shard, const Tensor& w_shard, const Tensor& b_full) {
  Tensor partial = matmul(x_shard, w_shard);
  partial.data = comm.all_reduce(tensor_group, std::move(partial.data), partial.width);
  add_bias_inplace(partial, b_full);
  return partial;
}

ParallelLinearGrads row_parallel_backward(const Tensor& x_shard, const Tensor& w_shard,
                                          const Tensor& dy_full) {
  ParallelLinearGrads g;
  g.dx = matmul_nt(dy_full, w_shard);
  g.dw = matmul_tn(x_shard, dy_full);
  g.db = colsum(dy_full);
  return g;
}

}  // namespace tedsim
