// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/nn.hpp"

#include <cmath>
#include <string>

namespace tedsim {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidConfigError(msg);
}

std::string dims(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "," + std::to_string(t.cols()) + "]";
}

}  // namespace

Tensor matmul(const Tensor& x, const Tensor& w) {
  require(x.cols() == w.rows(), "matmul: inner dims differ, " + dims(x) + " * " + dims(w));
  const std::int64_t m = x.rows(), k = x.cols(), n = w.cols();
  Tensor y = Tensor::zeros({m, n}, x.width);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const double xv = x.at(i, p);
      for (std::int64_t j = 0; j < n; ++j) y.at(i, j) += xv * w.at(p, j);
    }
  }
  return y;
}

Tensor matmul_tn(const Tensor& x, const Tensor& w) {
  require(x.rows() == w.rows(), "matmul_tn: outer dims differ, " + dims(x) + "^T * " + dims(w));
  const std::int64_t k = x.rows(), m = x.cols(), n = w.cols();
  Tensor y = Tensor::zeros({m, n}, x.width);
  for (std::int64_t p = 0; p < k; ++p) {
    for (std::int64_t i = 0; i < m; ++i) {
      const double xv = x.at(p, i);
      for (std::int64_t j = 0; j < n; ++j) y.at(i, j) += xv * w.at(p, j);
    }
  }
  return y;
}

Tensor matmul_nt(const Tensor& x, const Tensor& w) {
  require(x.cols() == w.cols(), "matmul_nt: inner dims differ, " + dims(x) + " * " + dims(w) + "^T");
  const std::int64_t m = x.rows(), n = x.cols(), k = w.rows();
  Tensor y = Tensor::zeros({m, k}, x.width);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < n; ++p) acc += x.at(i, p) * w.at(j, p);
      y.at(i, j) = acc;
    }
  }
  return y;
}

void add_bias_inplace(Tensor& y, const Tensor& bias) {
  require(y.cols() == bias.numel(),
          "bias length " + std::to_string(bias.numel()) + " != cols " + std::to_string(y.cols()));
  for (std::int64_t i = 0; i < y.rows(); ++i) {
    for (std::int64_t j = 0; j < y.cols(); ++j) y.at(i, j) += bias.data[j];
  }
}

Tensor colsum(const Tensor& dy) {
  Tensor s = Tensor::zeros({dy.cols()}, dy.width);
  for (std::int64_t i = 0; i < dy.rows(); ++i) {
    for (std::int64_t j = 0; j < dy.cols(); ++j) s.data[j] += dy.at(i, j);
  }
  return s;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  add_bias_inplace(y, b);
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  LinearGrads g;
  g.dx = matmul_nt(dy, w);
  g.dw = matmul_tn(x, dy);
  g.db = colsum(dy);
  return g;
}

double gelu_scalar(double x) {
  constexpr double kSqrt2OverPi = 0.7978845608028653558798921198687;
  constexpr double kCubic = 0.044715;
  const double u = kSqrt2OverPi * (x + kCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_scalar(double x) {
  constexpr double kSqrt2OverPi = 0.7978845608028653558798921198687;
  constexpr double kCubic = 0.044715;
  const double u = kSqrt2OverPi * (x + kCubic * x * x * x);
  const double t = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Tensor gelu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = gelu_scalar(v);
  return y;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  require(x.numel() == dy.numel(), "gelu_backward: shape mismatch");
  Tensor dx = x;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    dx.data[i] = dy.data[i] * gelu_grad_scalar(x.data[i]);
  }
  return dx;
}

}  // namespace tedsim
