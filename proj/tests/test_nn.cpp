// Copyright (c) 2026 the tedsim authors.
// SPDX-License-Identifier: Apache-2.0

#include "tedsim/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "tedsim/tensor.hpp"

namespace tedsim {
namespace {

TEST(Matmul, KnownProduct) {
  Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
  Tensor c = matmul(a, b);
  EXPECT_EQ(c.data, (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, ShapeMismatchThrows) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  EXPECT_THROW(matmul(a, b), InvalidConfigError);
}

TEST(Matmul, TransposedVariantsMatchExplicitTranspose) {
  Tensor x = seeded_init({3, 4}, 11, 0.5);
  Tensor w = seeded_init({3, 5}, 12, 0.5);
  Tensor xt = Tensor::zeros({4, 3});
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      xt.at(c, r) = x.at(r, c);
    }
  }
  Tensor ref = matmul(xt, w);
  Tensor got = matmul_tn(x, w);
  ASSERT_EQ(got.shape, ref.shape);
  for (std::size_t i = 0; i < ref.data.size(); ++i) {
    EXPECT_NEAR(got.data[i], ref.data[i], 1e-12);
  }

  Tensor y = seeded_init({6, 4}, 13, 0.5);
  Tensor ref2 = matmul(y, xt);
  Tensor got2 = matmul_nt(y, x);
  ASSERT_EQ(got2.shape, ref2.shape);
  for (std::size_t i = 0; i < ref2.data.size(); ++i) {
    EXPECT_NEAR(got2.data[i], ref2.data[i], 1e-12);
  }
}

TEST(Linear, ForwardMatchesHandComputation) {
  Tensor x = Tensor::from_rows({{1, 2}});
  Tensor w = Tensor::from_rows({{1, 0, 2}, {0, 1, 3}});
  Tensor b = Tensor::from_rows({{10, 20, 30}});
  b.shape = {3};
  Tensor y = linear_forward(x, w, b);
  EXPECT_EQ(y.data, (std::vector<double>{11, 22, 38}));
}

TEST(Gelu, ScalarValuesAndSymmetry) {
  EXPECT_EQ(gelu_scalar(0.0), 0.0);
  EXPECT_NEAR(gelu_scalar(3.0), 3.0, 1e-2);   // saturates toward identity
  EXPECT_NEAR(gelu_scalar(-3.0), 0.0, 1e-2);  // saturates toward zero
  // gelu(x) - gelu(-x) == x for the tanh form.
  for (double x : {0.3, 1.1, 2.7}) {
    EXPECT_NEAR(gelu_scalar(x) - gelu_scalar(-x), x, 1e-12);
  }
}

TEST(Gelu, GradMatchesFiniteDifference) {
  const double eps = 1e-6;
  for (double x : {-2.0, -0.7, 0.0, 0.4, 1.9}) {
    const double num = (gelu_scalar(x + eps) - gelu_scalar(x - eps)) / (2 * eps);
    EXPECT_NEAR(gelu_grad_scalar(x), num, 1e-6);
  }
}

// Central-difference check of the full linear backward. The scalar probe is
// sum(y * weights) for a fixed random weighting, so every output element
// contributes to the gradient.
TEST(Linear, BackwardMatchesFiniteDifference) {
  const std::int64_t n = 3, in = 4, out = 5;
  Tensor x = seeded_init({n, in}, 21, 0.5);
  Tensor w = seeded_init({in, out}, 22, 0.5);
  Tensor b = seeded_init({out}, 23, 0.5);
  Tensor probe = seeded_init({n, out}, 24, 1.0);

  auto loss = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
    Tensor y = linear_forward(xx, ww, bb);
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      s += y.data[i] * probe.data[i];
    }
    return s;
  };

  LinearGrads g = linear_backward(x, w, probe);

  const double eps = 1e-6;
  auto check = [&](Tensor& target, const Tensor& analytic) {
    for (std::size_t i = 0; i < target.data.size(); ++i) {
      const double keep = target.data[i];
      target.data[i] = keep + eps;
      const double up = loss(x, w, b);
      target.data[i] = keep - eps;
      const double down = loss(x, w, b);
      target.data[i] = keep;
      EXPECT_NEAR(analytic.data[i], (up - down) / (2 * eps), 1e-6);
    }
  };
  check(x, g.dx);
  check(w, g.dw);
  check(b, g.db);
}

TEST(Colsum, SumsOverRows) {
  Tensor t = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  Tensor s = colsum(t);
  ASSERT_EQ(s.shape, (std::vector<std::int64_t>{2}));
  EXPECT_EQ(s.data, (std::vector<double>{9, 12}));
}

TEST(Gelu, ForwardBackwardTensorsMatchScalars) {
  Tensor z = seeded_init({2, 3}, 31, 2.0);
  Tensor h = gelu_forward(z);
  Tensor dy = seeded_init({2, 3}, 32, 1.0);
  Tensor dz = gelu_backward(z, dy);
  for (std::size_t i = 0; i < z.data.size(); ++i) {
    EXPECT_EQ(h.data[i], gelu_scalar(z.data[i]));
    EXPECT_EQ(dz.data[i], dy.data[i] * gelu_grad_scalar(z.data[i]));
  }
}

}  // namespace
}  // namespace tedsim
