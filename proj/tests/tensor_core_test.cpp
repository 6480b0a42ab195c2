// Copyright 2026 The flasep Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "flasep/autodiff.hpp"
#include "flasep/gradcheck.hpp"
#include "flasep/memory.hpp"
#include "flasep/ops.hpp"

namespace flasep {
namespace {

TEST(Tensor, ShapeAndSizeAgree) {
  Tensor t(Shape{2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(Tensor::scalar(2.0).size(), 1u);
  EXPECT_EQ(Tensor().size(), 0u);
  EXPECT_THROW(Tensor(Shape{2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  const Tensor b = Tensor::matrix({{3, 4}, {5, 6}});
  EXPECT_EQ(matmul(Tensor::identity(2), b), b);
}

TEST(Matmul, RowTimesColumn) {
  const Tensor c = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c[0], 11.0);
}

TEST(Matmul, InnerMismatchReportsBothShapes) {
  try {
    matmul(Tensor(Shape{2, 3}), Tensor(Shape{4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, TransposedVariantsMatchExplicitTranspose) {
  std::mt19937_64 rng(1);
  const Tensor a = Tensor::randn({5, 3}, rng);
  const Tensor b = Tensor::randn({5, 4}, rng);
  const Tensor c = Tensor::randn({6, 3}, rng);
  EXPECT_LT(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)), 1e-14);
  EXPECT_LT(max_abs_diff(matmul_nt(a, c), matmul(a, transpose(c))), 1e-14);
}

TEST(Matmul, AssociativityProperty) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), l = dim(rng), n = dim(rng);
    const Tensor a = Tensor::randn({m, k}, rng);
    const Tensor b = Tensor::randn({k, l}, rng);
    const Tensor c = Tensor::randn({l, n}, rng);
    const double bound = 1e-9 * max_abs(a) * max_abs(b) * max_abs(c) *
                         static_cast<double>(k * l);
    EXPECT_LE(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))),
              bound);
  }
}

TEST(Ops, NonFiniteResultIsAnError) {
  const Tensor big = Tensor::matrix({{1e200}});
  EXPECT_THROW(matmul(big, big), NumericError);
}

TEST(DepthwiseConv, DeltaKernelIsExactIdentity) {
  std::mt19937_64 rng(3);
  const Tensor x = Tensor::randn({17, 5}, rng);
  for (std::size_t k : {1u, 3u, 7u}) {
    Tensor kernel(Shape{5, k});
    for (std::size_t c = 0; c < 5; ++c) kernel(c, k / 2) = 1.0;
    EXPECT_EQ(depthwise_conv1d(x, kernel), x);
  }
}

TEST(DepthwiseConv, AveragingKernelPreservesConstantInterior) {
  const std::size_t n = 12, c = 3, k = 5;
  Tensor x(Shape{n, c});
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t ch = 0; ch < c; ++ch) x(t, ch) = 1.0 + ch;
  }
  const Tensor y = depthwise_conv1d(x, Tensor(Shape{c, k}, 1.0 / k));
  for (std::size_t t = k / 2; t + k / 2 < n; ++t) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      EXPECT_NEAR(y(t, ch), x(t, ch), 1e-15);
    }
  }
}

TEST(DepthwiseConv, HandComputedZeroPadding) {
  const Tensor x(Shape{3, 1}, {1, 2, 3});
  const Tensor kernel(Shape{1, 3}, {1, 0, -1});
  const Tensor y = depthwise_conv1d(x, kernel);
  EXPECT_EQ(y, Tensor(Shape{3, 1}, {-2, -2, 2}));
}

TEST(DepthwiseConv, ChannelsDoNotMix) {
  Tensor x(Shape{4, 2});
  x(1, 0) = 1.0;
  std::mt19937_64 rng(4);
  const Tensor y = depthwise_conv1d(x, Tensor::randn({2, 3}, rng));
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(y(t, 1), 0.0);
}

TEST(DepthwiseConv, EvenKernelIsConfigError) {
  EXPECT_THROW(depthwise_conv1d(Tensor(Shape{4, 2}), Tensor(Shape{2, 4})),
               ConfigError);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  const Tensor y = layer_norm(Tensor::matrix({{5, 5, 5}}),
                              Tensor(Shape{3}, 1.0), Tensor(Shape{3}, 0.0));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, PlusMinusOne) {
  const Tensor y = layer_norm(Tensor::matrix({{1, -1}}), Tensor(Shape{2}, 1.0),
                              Tensor(Shape{2}, 0.0), 1e-5);
  // 1 / sqrt(1 + 1e-5)
  EXPECT_NEAR(y[0], 0.9999950000374997, 1e-15);
  EXPECT_NEAR(y[1], -0.9999950000374997, 1e-15);
}

TEST(LayerNorm, ZeroGainCollapsesToBias) {
  std::mt19937_64 rng(5);
  const Tensor y = layer_norm(Tensor::randn({4, 2}, rng), Tensor(Shape{2}),
                              Tensor(Shape{2}, 7.0));
  for (double v : y.values()) EXPECT_EQ(v, 7.0);
}

TEST(LayerNorm, RowStatisticsProperty) {
  std::mt19937_64 rng(6);
  const double eps = 1e-5;
  const Tensor x = Tensor::randn({50, 16}, rng, 3.0);
  const Tensor y =
      layer_norm(x, Tensor(Shape{16}, 1.0), Tensor(Shape{16}, 0.0), eps);
  for (std::size_t i = 0; i < 50; ++i) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(i)) mean += v;
    mean /= 16.0;
    for (double v : y.row(i)) var += (v - mean) * (v - mean);
    var /= 16.0;
    EXPECT_LT(std::abs(mean), 1e-10);
    EXPECT_LE(std::abs(var - 1.0), eps);
  }
}

TEST(Softmax, UniformRow) {
  const Tensor y = softmax_rows(Tensor::matrix({{0, 0}}));
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, LogTwoRow) {
  const Tensor y = softmax_rows(Tensor::matrix({{std::log(2.0), 0}}));
  EXPECT_NEAR(y[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Tensor y = softmax_rows(Tensor::matrix({{1000, 0}}));
  EXPECT_NEAR(y[0], 1.0, 1e-15);
  EXPECT_LT(y[1], 1e-300);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(7);
  const Tensor s = Tensor::randn({20, 9}, rng, 5.0);
  Tensor shifted = s;
  for (std::size_t i = 0; i < 20; ++i) {
    for (double& v : shifted.row(i)) v += 3.0 * static_cast<double>(i) - 17.0;
  }
  const Tensor y = softmax_rows(s);
  const Tensor ys = softmax_rows(shifted);
  for (std::size_t i = 0; i < 20; ++i) {
    double total = 0.0;
    for (double v : y.row(i)) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_LT(max_abs_diff(y, ys), 1e-12);
}

TEST(Autodiff, LinearMapGradientIsInputBroadcast) {
  Tape tape;
  const Tensor xv(Shape{3, 1}, {1.5, -2.0, 0.25});
  const Var w = tape.parameter("W", Tensor(Shape{2, 3}, 0.3));
  const Var x = tape.constant(xv);
  const Var loss = sum(matmul(w, x));
  const GradMap g = backward(tape, loss);
  const Tensor& gw = g.at("W");
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(gw(i, j), xv[j]);
  }
  ASSERT_NE(tape.grad(loss), nullptr);
  EXPECT_EQ(tape.grad(loss)->item(), 1.0);
}

TEST(Autodiff, ReluGate) {
  Tape tape;
  const Var x = tape.parameter("x", Tensor::vector({-1.0, 2.0}));
  const GradMap g = backward(tape, sum(relu(x)));
  EXPECT_EQ(g.at("x"), Tensor::vector({0.0, 1.0}));
}

TEST(Autodiff, ReluSubgradientAtZeroIsZero) {
  Tape tape;
  const Var x = tape.parameter("x", Tensor::vector({0.0}));
  EXPECT_EQ(backward(tape, sum(relu(x))).at("x")[0], 0.0);
}

TEST(Autodiff, NonScalarLossIsContractError) {
  Tape tape;
  const Var x = tape.parameter("x", Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(backward(tape, relu(x)), ContractError);
}

TEST(Autodiff, UnreachedParameterGetsZeroGradient) {
  Tape tape;
  const Var x = tape.parameter("x", Tensor::vector({1.0, 2.0}));
  tape.parameter("unused", Tensor(Shape{2, 2}, 1.0));
  const GradMap g = backward(tape, sum(x));
  EXPECT_EQ(g.at("unused"), Tensor(Shape{2, 2}, 0.0));
}

TEST(Autodiff, TapeIsTopologicalAndEachNodeVisitedOnce) {
  Tape tape;
  const Var x = tape.parameter("x", Tensor::matrix({{1, 2}, {3, 4}}));
  const Var y = hadamard(x, x);
  const Var z = add(y, scale(y, 2.0));  // y feeds two consumers
  const Var loss = sum(z);
  for (std::size_t id = 0; id < tape.size(); ++id) {
    for (std::size_t in : tape.inputs_of(id)) EXPECT_LT(in, id);
  }
  const GradMap g = backward(tape, loss);
  // loss, z, scale, y: the four non-leaf nodes.
  EXPECT_EQ(tape.visited_count(), 4u);
  // d/dx sum(3 x^2) = 6x
  EXPECT_EQ(g.at("x"), Tensor::matrix({{6, 12}, {18, 24}}));
}

TEST(Autodiff, DuplicateParameterNameRejected) {
  Tape tape;
  tape.parameter("w", Tensor::scalar(1.0));
  EXPECT_THROW(tape.parameter("w", Tensor::scalar(2.0)), ContractError);
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(8);
  const double err = grad_check(
      [](Tape&, const Var& x) { return scale(sum(hadamard(x, x)), 0.5); },
      Tensor::randn({4, 3}, rng));
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, SoftmaxRowSumIsConstant) {
  std::mt19937_64 rng(9);
  const Tensor x = Tensor::randn({3, 4}, rng);
  const MultiScalarFn f = [](Tape&, const VarMap& v) {
    return sum(softmax_rows(v.at("x")));
  };
  const GradCheckReport r = grad_check(f, {{"x", x}});
  // Both sides are zero up to rounding; compare absolutely.
  Tape tape;
  const Var xv = tape.parameter("x", x);
  const GradMap g = backward(tape, sum(softmax_rows(xv)));
  EXPECT_LT(max_abs(g.at("x")), 1e-12);
  EXPECT_LT(std::abs(r.worst_numeric), 1e-9);
}

TEST(GradCheck, NonFiniteProbeIsNumericError) {
  // log-like blowup: 1/x near zero is not an op, so push exp overflow via
  // softmax of a huge input scaled by matmul.
  const MultiScalarFn f = [](Tape&, const VarMap& v) {
    return sum(matmul(v.at("x"), v.at("x")));
  };
  EXPECT_THROW(grad_check(f, {{"x", Tensor::matrix({{1e160}})}}), NumericError);
}

struct OpCase {
  const char* name;
  std::function<Var(Tape&, const Var&)> f;
  Shape shape;
};

class ElementaryGradients : public ::testing::TestWithParam<int> {};

TEST_P(ElementaryGradients, MatchFiniteDifferencesAtRandomPoints) {
  std::mt19937_64 rng(100 + GetParam());
  const Tensor w34 = Tensor::randn({3, 4}, rng);
  const Tensor w4 = Tensor::randn({4}, rng);
  const Tensor k43 = Tensor::randn({4, 3}, rng);
  const Tensor w54 = Tensor::randn({5, 4}, rng);
  std::vector<OpCase> cases = {
      {"matmul_left",
       [&](Tape& t, const Var& x) {
         return sum(hadamard(matmul(x, t.constant(transpose(w34))),
                             t.constant(Tensor(Shape{5, 3}, 0.7))));
       },
       {5, 4}},
      {"matmul_nt",
       [&](Tape& t, const Var& x) {
         return sum(matmul_nt(x, t.constant(w34)));
       },
       {5, 4}},
      {"sigmoid",
       [](Tape& t, const Var& x) {
         return sum(hadamard(sigmoid(x), t.constant(Tensor(Shape{5, 4}, 1.3))));
       },
       {5, 4}},
      {"silu", [](Tape&, const Var& x) { return sum(silu(x)); }, {5, 4}},
      {"layer_norm",
       [&](Tape& t, const Var& x) {
         const Var y = layer_norm(x, t.constant(w4), t.constant(w4));
         return sum(hadamard(y, y));
       },
       {5, 4}},
      {"softmax_rows",
       [&](Tape& t, const Var& x) {
         return sum(hadamard(softmax_rows(x), t.constant(w54)));
       },
       {5, 4}},
      {"depthwise_conv1d",
       [&](Tape& t, const Var& x) {
         const Var y = depthwise_conv1d(x, t.constant(k43));
         return sum(hadamard(y, y));
       },
       {5, 4}},
      {"slice_concat",
       [](Tape&, const Var& x) {
         const Var a = slice_cols(x, 0, 1);
         const Var b = slice_cols(x, 1, 4);
         const std::vector<Var> parts = {b, a};
         const Var c = concat_cols(parts);
         return sum(hadamard(c, c));
       },
       {5, 4}},
      {"frame_overlap_add",
       [](Tape&, const Var& x) {
         const Var y = overlap_add(frame(x, 4, 2), 2, 11);
         return sum(hadamard(y, y));
       },
       {11}},
  };
  for (const auto& c : cases) {
    const Tensor x = Tensor::randn(c.shape, rng);
    EXPECT_LT(grad_check(c.f, x), 1e-4) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(TenRandomPoints, ElementaryGradients,
                         ::testing::Range(0, 10));

TEST(GradCheck, LayerNormGainAndBias) {
  std::mt19937_64 rng(12);
  const MultiScalarFn f = [](Tape&, const VarMap& v) {
    const Var y = layer_norm(v.at("x"), v.at("g"), v.at("b"));
    return sum(hadamard(y, y));
  };
  const auto r = grad_check(f, {{"x", Tensor::randn({3, 5}, rng)},
                                {"g", Tensor::randn({5}, rng)},
                                {"b", Tensor::randn({5}, rng)}});
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradCheck, ConvKernelGradient) {
  std::mt19937_64 rng(13);
  const MultiScalarFn f = [](Tape&, const VarMap& v) {
    const Var y = depthwise_conv1d(v.at("x"), v.at("k"));
    return sum(hadamard(y, y));
  };
  const auto r = grad_check(f, {{"x", Tensor::randn({6, 3}, rng)},
                                {"k", Tensor::randn({3, 5}, rng)}});
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(Memory, CountsLiveElementsAndHighWaterMark) {
  const std::int64_t base = memory::live_elements();
  memory::reset_peak();
  {
    Tensor a(Shape{100});
    EXPECT_EQ(memory::live_elements(), base + 100);
    {
      Tensor b(Shape{50});
      EXPECT_EQ(memory::peak_elements(), base + 150);
    }
    EXPECT_EQ(memory::live_elements(), base + 100);
  }
  EXPECT_EQ(memory::live_elements(), base);
  EXPECT_EQ(memory::peak_elements(), base + 150);
  memory::reset_peak();
  EXPECT_EQ(memory::peak_elements(), base);
}

TEST(Memory, LimitTurnsLargeAllocationIntoError) {
  const std::int64_t base = memory::live_elements();
  memory::ScopedElementLimit limit(base + 1000);
  EXPECT_NO_THROW(Tensor(Shape{1000}));
  EXPECT_THROW(Tensor(Shape{1001}), OutOfMemoryError);
  EXPECT_EQ(memory::live_elements(), base);
}

}  // namespace
}  // namespace flasep
