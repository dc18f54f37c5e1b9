// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "tedsim/tensor.hpp"

namespace tedsim {

// Dense building blocks shared by the parallel model and the serial
// reference. All loops run in a fixed order so results are reproducible
// bit for bit; shapes at simulation scale are tiny, so no BLAS.

// y[m,n] = x[m,k] * w[k,n]
Tensor matmul(const Tensor& x, const Tensor& w);
// y[m,n] = x[k,m]^T * w[k,n]   (used for weight gradients: x^T * dy)
Tensor matmul_tn(const Tensor& x, const Tensor& w);
// y[m,k] = x[m,n] * w[k,n]^T   (used for input gradients: dy * w^T)
Tensor matmul_nt(const Tensor& x, const Tensor& w);

void add_bias_inplace(Tensor& y, const Tensor& bias);
// Column sums of dy: the bias gradient.
Tensor colsum(const Tensor& dy);

// y = x * w + b
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);

struct LinearGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

// tanh-form gaussian-error linear unit and its exact derivative.
double gelu_scalar(double x);
double gelu_grad_scalar(double x);
Tensor gelu_forward(const Tensor& x);
// dx = dy * gelu'(x), with x the forward input.
Tensor gelu_backward(const Tensor& x, const Tensor& dy);

}  // namespace tedsim
