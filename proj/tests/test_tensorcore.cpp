// Copyright 2026 The LEAD Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "lead/gradcheck.hpp"
#include "lead/ops.hpp"
#include "test_util.hpp"

namespace lead {
namespace {

using testing::random_tensor;
using D = Tensor<double>;
using F = Tensor<float>;

constexpr int kSeeds = 20;
constexpr double kGradTol = 1e-5;

TEST(Affine, IdentityMatrix) {
  auto out = affine(F::matrix(1, 2, {1, 2}), F::matrix(2, 2, {1, 0, 0, 1}), F::vector({0, 0}));
  EXPECT_EQ(out.shape(), (Shape{1, 2}));
  EXPECT_EQ(out.values(), (std::vector<float>{1, 2}));
}

TEST(Affine, HandArithmetic) {
  auto out = affine(F::matrix(1, 2, {1, 1}), F::matrix(2, 1, {2, 3}), F::vector({1}));
  EXPECT_EQ(out.values(), (std::vector<float>{6}));
}

TEST(Affine, MismatchNamesBothShapes) {
  try {
    affine(F::zeros({2, 3}), F::zeros({4, 2}), F::zeros({2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Affine, SumGradientMatchesFiniteDifferences) {
  Rng rng(7);
  auto x = random_tensor(rng, {3, 4});
  auto w = random_tensor(rng, {4, 2});
  auto b = random_tensor(rng, {2});
  const double err = finite_diff_check<double>([&] { return sum(affine(x, w, b)); },
                                               {{"x", x}, {"W", w}, {"b", b}});
  EXPECT_LT(err, 1e-6);
}

TEST(Sigmoid, KnownValues) {
  auto out = sigmoid(D::vector({0.0, std::log(3.0), -1000.0, 1000.0}));
  EXPECT_DOUBLE_EQ(out.values()[0], 0.5);
  EXPECT_NEAR(out.values()[1], 0.75, 1e-15);
  EXPECT_EQ(out.values()[2], 0.0);
  EXPECT_EQ(out.values()[3], 1.0);
  for (double v : out.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Sigmoid, SaturatedGradientIsFinite) {
  auto x = F::vector({-1000.0f, 1000.0f}, true);
  backward(sum(sigmoid(x)));
  for (float g : x.grad()) {
    EXPECT_TRUE(std::isfinite(g));
    EXPECT_EQ(g, 0.0f);
  }
}

TEST(Hadamard, Elementwise) {
  EXPECT_EQ(hadamard(F::vector({1, 2}), F::vector({3, 4})).values(), (std::vector<float>{3, 8}));
  EXPECT_EQ(hadamard(F::vector({1, 2}), F::vector({0, 0})).values(), (std::vector<float>{0, 0}));
}

TEST(Hadamard, BroadcastAlongSequence) {
  auto out = hadamard(F::matrix(2, 2, {1, 2, 3, 4}), F::vector({10, 100}));
  EXPECT_EQ(out.values(), (std::vector<float>{10, 200, 30, 400}));
}

TEST(Hadamard, NonBroadcastableThrows) {
  EXPECT_THROW(hadamard(F::zeros({2, 2}), F::zeros({3})), DimensionError);
  EXPECT_THROW(hadamard(F::zeros({2, 2}), F::zeros({2, 3})), DimensionError);
}

TEST(Concat, LastAxis) {
  auto out = concat(F::vector({1, 2}), F::vector({3}), 0);
  EXPECT_EQ(out.values(), (std::vector<float>{1, 2, 3}));
}

TEST(Concat, SliceRoundTrip) {
  Rng rng(3);
  for (std::size_t axis = 0; axis < 2; ++axis) {
    auto a = random_tensor(rng, {3, 2});
    auto b = axis == 0 ? random_tensor(rng, {4, 2}) : random_tensor(rng, {3, 5});
    auto c = concat(a, b, axis);
    EXPECT_EQ(slice(c, axis, 0, a.dim(axis)).values(), a.values());
    EXPECT_EQ(slice(c, axis, a.dim(axis), c.dim(axis)).values(), b.values());
  }
}

TEST(Concat, IncompatibleThrows) {
  EXPECT_THROW(concat(F::zeros({2, 3}), F::zeros({3, 2}), 1), DimensionError);
  EXPECT_THROW(concat(F::zeros({2, 3}), F::zeros({3, 2}), 0), DimensionError);
}

TEST(Concat, SumGradientIsOnes) {
  auto a = D::zeros({2, 3}, true);
  auto b = D::zeros({2, 1}, true);
  backward(sum(concat(a, b, 1)));
  for (double g : a.grad()) EXPECT_EQ(g, 1.0);
  for (double g : b.grad()) EXPECT_EQ(g, 1.0);
  Rng rng(5);
  auto x = random_tensor(rng, {2, 3});
  auto y = random_tensor(rng, {2, 1});
  EXPECT_LT(finite_diff_check<double>([&] { return sum(concat(x, y, 1)); }, {{"a", x}, {"b", y}}), 1e-6);
}

TEST(LayerNorm, ConstantRowIsZero) {
  auto out = layer_norm(F::matrix(1, 4, {3, 3, 3, 3}), F::full({4}, 1), F::zeros({4}));
  for (float v : out.values()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(v, 0.0f);
  }
}

TEST(LayerNorm, NormalizedInputUnchanged) {
  auto out = layer_norm(D::matrix(1, 2, {1, -1}), D::full({2}, 1), D::zeros({2}));
  EXPECT_NEAR(out.values()[0], 1.0, 1e-5);
  EXPECT_NEAR(out.values()[1], -1.0, 1e-5);
}

TEST(LayerNorm, MeanEqualsBiasMeanUnderUniformGain) {
  Rng rng(11);
  auto x = random_tensor(rng, {3, 8});
  auto bias = random_tensor(rng, {8});
  auto out = layer_norm(x, D::full({8}, 2.5), bias);
  double bias_mean = 0;
  for (double v : bias.values()) bias_mean += v / 8;
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0;
    for (std::size_t c = 0; c < 8; ++c) m += out.values()[r * 8 + c] / 8;
    EXPECT_NEAR(m, bias_mean, 1e-12);
  }
}

TEST(LayerNorm, GradientOnRandomInput) {
  Rng rng(13);
  auto x = random_tensor(rng, {2, 8});
  auto g = random_tensor(rng, {8});
  auto b = random_tensor(rng, {8});
  auto w = random_tensor(rng, {2, 8});
  const double err = finite_diff_check<double>([&] { return sum(hadamard(layer_norm(x, g, b), w)); },
                                               {{"x", x}, {"gain", g}, {"bias", b}});
  EXPECT_LT(err, 1e-6);
}

TEST(Backward, SumGivesOnes) {
  auto x = D::vector({1, 2, 3}, true);
  backward(sum(x));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, SquareGivesTwoX) {
  auto x = D::vector({2}, true);
  backward(sum(hadamard(x, x)));
  EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = D::vector({1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, SecondCallIsStateError) {
  auto x = D::vector({1, 2}, true);
  auto loss = sum(x);
  backward(loss);
  EXPECT_THROW(backward(loss), StateError);
}

TEST(Backward, FanOutAccumulates) {
  auto x = D::vector({1.5, -2.0}, true);
  auto w1 = D::vector({1, 2});
  auto w2 = D::vector({3, 4});
  auto w3 = D::vector({5, 6});
  backward(sum(add(add(hadamard(x, w1), hadamard(x, w2)), hadamard(x, w3))));
  EXPECT_EQ(x.grad()[0], 9.0);
  EXPECT_EQ(x.grad()[1], 12.0);
}

TEST(Backward, ConstantsOutsideGraphKeepZeroGrad) {
  auto x = D::vector({1, 2}, true);
  auto unused = D::vector({3, 4}, true);
  backward(sum(x));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(unused.grad().size(), unused.numel());
}

TEST(Backward, GatedFusionExpression) {
  Rng rng(17);
  auto h = random_tensor(rng, {3, 4});
  auto e = random_tensor(rng, {4});
  auto w = random_tensor(rng, {8, 4}, 0.5);
  auto b = random_tensor(rng, {4});
  auto loss = [&] {
    auto g = sigmoid(affine(concat(h, expand_rows(e, 3), 1), w, b));
    auto fused = interpolate(h, e, g);
    return sum(hadamard(fused, fused));
  };
  EXPECT_LT(finite_diff_check<double>(loss, {{"h", h}, {"e", e}, {"W", w}, {"b", b}}), 1e-6);
}

TEST(FiniteDiff, QuadraticIsExact) {
  auto x = D::vector({0.3, -1.2, 2.0});
  auto loss = [&] { return scale(sum(hadamard(x, x)), 0.5); };
  EXPECT_LT(finite_diff_check<double>(loss, {{"x", x}}), 1e-9);
}

TEST(FiniteDiff, DetectsCorruptedRule) {
  auto x = D::vector({0.3, -1.2, 2.0});
  // Square whose recorded derivative is x instead of 2x.
  auto bad_square = [](const D& in) {
    std::vector<double> out;
    for (double v : in.values()) out.push_back(v * v);
    auto n = in.node();
    return detail::record<double>(in.shape(), std::move(out), {&in}, [n](Node<double>& self) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) n->grad_buffer()[i] += n->value[i] * self.grad[i];
    });
  };
  EXPECT_GT(finite_diff_check<double>([&] { return sum(bad_square(x)); }, {{"x", x}}), 1e-2);
}

TEST(FiniteDiff, RejectsBadEps) {
  auto x = D::vector({1});
  auto f = [&] { return sum(x); };
  EXPECT_THROW(finite_diff_check<double>(f, {{"x", x}}, 0.0), ContractError);
  EXPECT_THROW(finite_diff_check<double>(f, {{"x", x}}, 0.1), ContractError);
}

TEST(FiniteDiff, NonFiniteNamesParameter) {
  auto x = D::vector({1e308});
  try {
    finite_diff_check<double>([&] { return sum(hadamard(x, x)); }, {{"huge", x}});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("huge"), std::string::npos);
  }
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(D({2, 3}, std::vector<double>(5)), DimensionError);
  auto t = D::zeros({2, 3});
  EXPECT_EQ(t.numel(), 6u);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto run = [] {
    Rng rng(99);
    auto q = random_tensor<float>(rng, {5, 8});
    auto k = random_tensor<float>(rng, {5, 8});
    auto v = random_tensor<float>(rng, {5, 8});
    return attention(q, k, v, 2, true).values();
  };
  EXPECT_EQ(run(), run());
}

// Property suite: every differentiable op against central differences.
struct OpCase {
  const char* name;
  std::function<double(std::uint64_t)> check;
};

double check_unary(std::uint64_t seed, D (*op)(const D&)) {
  Rng rng(seed);
  auto x = random_tensor(rng, {3, 5});
  auto w = random_tensor(rng, {3, 5});
  return finite_diff_check<double>([&] { return sum(hadamard(op(x), w)); }, {{"x", x}});
}

std::vector<OpCase> op_cases() {
  return {
      {"matmul",
       [](std::uint64_t s) {
         Rng rng(s);
         auto x = random_tensor(rng, {3, 4});
         auto w = random_tensor(rng, {4, 2});
         auto m = random_tensor(rng, {3, 2});
         return finite_diff_check<double>([&] { return sum(hadamard(matmul(x, w), m)); }, {{"x", x}, {"w", w}});
       }},
      {"affine",
       [](std::uint64_t s) {
         Rng rng(s);
         auto x = random_tensor(rng, {3, 4});
         auto w = random_tensor(rng, {4, 2});
         auto b = random_tensor(rng, {2});
         auto m = random_tensor(rng, {3, 2});
         return finite_diff_check<double>([&] { return sum(hadamard(affine(x, w, b), m)); },
                                          {{"x", x}, {"w", w}, {"b", b}});
       }},
      {"add_sub_broadcast",
       [](std::uint64_t s) {
         Rng rng(s);
         auto a = random_tensor(rng, {3, 4});
         auto b = random_tensor(rng, {4});
         auto m = random_tensor(rng, {3, 4});
         return finite_diff_check<double>(
             [&] { return sum(hadamard(sub(add(a, b), hadamard(a, b)), m)); }, {{"a", a}, {"b", b}});
       }},
      {"sigmoid", [](std::uint64_t s) { return check_unary(s, [](const D& x) { return sigmoid(x); }); }},
      {"gelu", [](std::uint64_t s) { return check_unary(s, [](const D& x) { return gelu(x); }); }},
      {"scale", [](std::uint64_t s) { return check_unary(s, [](const D& x) { return scale(x, -1.7); }); }},
      {"mean",
       [](std::uint64_t s) {
         Rng rng(s);
         auto x = random_tensor(rng, {4, 3});
         return finite_diff_check<double>([&] { return mean(hadamard(x, x)); }, {{"x", x}});
       }},
      {"reshape_slice_concat",
       [](std::uint64_t s) {
         Rng rng(s);
         auto x = random_tensor(rng, {2, 6});
         auto y = random_tensor(rng, {3, 4});
         auto m = random_tensor(rng, {5, 4});
         return finite_diff_check<double>(
             [&] { return sum(hadamard(concat(reshape(slice(x, 1, 0, 4), {2, 4}), y, 0), m)); },
             {{"x", x}, {"y", y}});
       }},
      {"expand_mean_scale_rows",
       [](std::uint64_t s) {
         Rng rng(s);
         auto v = random_tensor(rng, {4});
         auto x = random_tensor(rng, {3, 4});
         auto r = random_tensor(rng, {3});
         auto m = random_tensor(rng, {4});
         return finite_diff_check<double>(
             [&] { return sum(hadamard(mean_rows(scale_rows(add(x, expand_rows(v, 3)), r)), m)); },
             {{"v", v}, {"x", x}, {"r", r}});
       }},
      {"embedding",
       [](std::uint64_t s) {
         Rng rng(s);
         auto table = random_tensor(rng, {6, 3});
         const std::vector<int> ids{1, 4, 1, 0};
         auto m = random_tensor(rng, {4, 3});
         return finite_diff_check<double>([&] { return sum(hadamard(embedding(table, ids), m)); },
                                          {{"table", table}});
       }},
      {"layer_norm",
       [](std::uint64_t s) {
         Rng rng(s);
         auto x = random_tensor(rng, {3, 6});
         auto g = random_tensor(rng, {6});
         auto b = random_tensor(rng, {6});
         auto m = random_tensor(rng, {3, 6});
         return finite_diff_check<double>([&] { return sum(hadamard(layer_norm(x, g, b), m)); },
                                          {{"x", x}, {"g", g}, {"b", b}});
       }},
      {"interpolate",
       [](std::uint64_t s) {
         Rng rng(s);
         auto h = random_tensor(rng, {3, 4});
         auto e = random_tensor(rng, {4});
         auto g = random_tensor(rng, {3, 4});
         auto m = random_tensor(rng, {3, 4});
         return finite_diff_check<double>([&] { return sum(hadamard(interpolate(h, e, sigmoid(g)), m)); },
                                          {{"h", h}, {"e", e}, {"g", g}});
       }},
      {"attention_causal",
       [](std::uint64_t s) {
         Rng rng(s);
         auto q = random_tensor(rng, {4, 6});
         auto k = random_tensor(rng, {4, 6});
         auto v = random_tensor(rng, {4, 6});
         auto m = random_tensor(rng, {4, 6});
         return finite_diff_check<double>([&] { return sum(hadamard(attention(q, k, v, 2, true), m)); },
                                          {{"q", q}, {"k", k}, {"v", v}});
       }},
      {"attention_bidirectional",
       [](std::uint64_t s) {
         Rng rng(s);
         auto q = random_tensor(rng, {3, 4});
         auto k = random_tensor(rng, {3, 4});
         auto v = random_tensor(rng, {3, 4});
         auto m = random_tensor(rng, {3, 4});
         return finite_diff_check<double>([&] { return sum(hadamard(attention(q, k, v, 1, false), m)); },
                                          {{"q", q}, {"k", k}, {"v", v}});
       }},
  };
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesFiniteDifferencesOverSeeds) {
  const auto c = op_cases().at(GetParam());
  for (int seed = 0; seed < kSeeds; ++seed) {
    const double err = c.check(1000 + static_cast<std::uint64_t>(seed));
    EXPECT_LT(err, kGradTol) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, op_cases().size()),
                         [](const auto& info) { return std::string(op_cases()[info.param].name); });

TEST(Attention, CausalIgnoresFuture) {
  Rng rng(21);
  auto q = random_tensor(rng, {4, 4});
  auto k = random_tensor(rng, {4, 4});
  auto v = random_tensor(rng, {4, 4});
  auto base = attention(q, k, v, 2, true);
  k.values()[3 * 4 + 1] += 5.0;
  v.values()[3 * 4 + 2] -= 3.0;
  auto moved = attention(q, k, v, 2, true);
  for (std::size_t i = 0; i < 3 * 4; ++i) EXPECT_EQ(base.values()[i], moved.values()[i]);
}

}  // namespace
}  // namespace lead
