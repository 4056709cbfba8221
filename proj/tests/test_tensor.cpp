// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gret/gradcheck.hpp"
#include "gret/kernels.hpp"
#include "gret/ops.hpp"
#include "gret/tensor.hpp"
#include "test_util.hpp"

namespace gret {
namespace {

using testing::bitwise_equal;
using testing::random_tensor;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
  auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_DOUBLE_EQ(t.at({1, 2}), 6.0);
}

TEST(Ops, MatmulIdentity) {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto col = Tensor::from({2, 1}, {2, 3});
  auto out = ops::matmul(eye, col);
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_EQ(out.data()[0], 2.0);
  EXPECT_EQ(out.data()[1], 3.0);
}

TEST(Ops, MeanOfConstant) {
  EXPECT_EQ(ops::mean(Tensor::full({4}, 2.0)).item(), 2.0);
}

TEST(Ops, SigmoidAtZero) { EXPECT_EQ(ops::sigmoid(Tensor::scalar(0.0)).item(), 0.5); }

TEST(Ops, ShapeMismatchNamesOperationAndShapes) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 2});
  try {
    ops::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[2,2]"), std::string::npos);
  }
  EXPECT_THROW(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
}

TEST(Ops, BroadcastOnlyOverUnitAxes) {
  auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto row = Tensor::from({3}, {10, 20, 30});
  auto col = Tensor::from({2, 1}, {100, 200});
  auto r = ops::add(a, row);
  EXPECT_EQ(r.at({1, 2}), 36.0);
  auto c = ops::add(a, col);
  EXPECT_EQ(c.at({1, 0}), 204.0);
  EXPECT_THROW(ops::add(a, Tensor::zeros({2})), ShapeError);
}

TEST(Backward, SquareGradient) {
  auto x = Tensor::from({1}, {3.0}, true);
  backward(ops::sum(ops::mul(x, x)));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SigmoidGradient) {
  auto x = Tensor::scalar(0.0, true);
  backward(ops::sigmoid(x));
  EXPECT_EQ(x.grad()[0], 0.25);
}

TEST(Backward, NonScalarLossRejected) {
  auto x = Tensor::zeros({2}, true);
  auto y = ops::scale(x, 2.0);
  EXPECT_THROW(backward(y), ContractError);
  autodiff::Graph::current().clear();
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = Tensor::from({1}, {2.0}, true);
  backward(ops::sum(ops::mul(x, x)));
  backward(ops::sum(ops::mul(x, x)));
  EXPECT_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, GraphFreedAfterBackward) {
  auto x = Tensor::from({1}, {2.0}, true);
  backward(ops::sum(ops::exp(x)));
  EXPECT_TRUE(autodiff::Graph::current().empty());
}

TEST(Backward, NoGradLeavesGraphUntouched) {
  auto x = Tensor::from({1}, {2.0}, true);
  {
    autodiff::NoGradGuard guard;
    auto y = ops::exp(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(autodiff::Graph::current().empty());
}

TEST(Backward, UnusedInputsGetZeroGradient) {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  auto unused = Tensor::from({3}, {1.0, 1.0, 1.0}, true);
  auto y = ops::sum(ops::mul(x, x));
  auto z = ops::sum(unused);  // recorded but not part of the loss
  (void)z;
  backward(y);
  EXPECT_EQ(unused.grad(), std::vector<double>(3, 0.0));
}

TEST(Backward, ConstantsNeverBecomeLeaves) {
  auto c = Tensor::from({2}, {1.0, 2.0});
  auto x = Tensor::from({2}, {3.0, 4.0}, true);
  backward(ops::sum(ops::mul(c, x)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_EQ(x.grad(), (std::vector<double>{1.0, 2.0}));
}

TEST(Backward, TwoConsumersSumContributions) {
  std::mt19937_64 rng(7);
  auto x = random_tensor(rng, {3, 2});
  auto f = [](const Tensor& t) {
    auto a = ops::tanh(t);
    auto b = ops::mul(t, t);
    return ops::sum(ops::add(a, b));
  };
  EXPECT_LE(finite_difference_check(f, x), 1e-4);
  auto leaf = x.detach();
  leaf.set_requires_grad(true);
  backward(f(leaf));
  const auto g = leaf.grad();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = x.data()[i];
    const double t = std::tanh(v);
    EXPECT_NEAR(g[i], 1 - t * t + 2 * v, 1e-12);
  }
}

TEST(GradCheck, SumIsExact) {
  std::mt19937_64 rng(1);
  auto x = random_tensor(rng, {4, 3});
  EXPECT_LE(finite_difference_check([](const Tensor& t) { return ops::sum(t); }, x), 1e-10);
}

TEST(GradCheck, RejectsDegenerateStep) {
  auto x = Tensor::zeros({2});
  EXPECT_THROW(finite_difference_check([](const Tensor& t) { return ops::sum(t); }, x, 0.0),
               ContractError);
}

TEST(GradCheck, DetectsNondeterminism) {
  auto x = Tensor::zeros({2});
  int calls = 0;
  auto f = [&](const Tensor& t) { return ops::add_scalar(ops::sum(t), ++calls); };
  EXPECT_THROW(finite_difference_check(f, x), OracleError);
}

// Every forward op over 100 random seeds, all tensors <= 32 elements.
struct OpCase {
  std::string name;
  std::function<std::vector<Shape>(std::mt19937_64&)> shapes;
  std::function<Tensor(const std::vector<Tensor>&)> f;
  double lo = -1.0, hi = 1.0;
};

std::vector<OpCase> op_cases() {
  auto fixed = [](std::vector<Shape> s) {
    return [s](std::mt19937_64&) { return s; };
  };
  // A fixed random projection turns vector outputs into a scalar with a
  // nontrivial upstream gradient.
  auto probe = [](const Tensor& t) {
    std::vector<double> w(t.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
    return ops::sum(ops::mul(t, Tensor::from(t.shape(), w)));
  };
  using V = const std::vector<Tensor>&;
  std::vector<OpCase> cases = {
      {"add", fixed({{3, 4}, {4}}), [=](V x) { return probe(ops::add(x[0], x[1])); }},
      {"sub", fixed({{2, 1, 3}, {2, 3}}), [=](V x) { return probe(ops::sub(x[0], x[1])); }},
      {"mul", fixed({{4, 3}, {4, 1}}), [=](V x) { return probe(ops::mul(x[0], x[1])); }},
      {"div", fixed({{3, 3}, {3}}), [=](V x) { return probe(ops::div(x[0], x[1])); }, 0.5, 2.0},
      {"matmul", fixed({{3, 4}, {4, 2}}), [=](V x) { return probe(ops::matmul(x[0], x[1])); }},
      {"bmm", fixed({{2, 2, 3}, {2, 3, 2}}), [=](V x) { return probe(ops::bmm(x[0], x[1])); }},
      {"affine", fixed({{3, 4}, {4, 3}, {3}}),
       [=](V x) { return probe(ops::affine(x[0], x[1], x[2])); }},
      {"sum", fixed({{5, 2}}), [=](V x) { return ops::sum(ops::mul(x[0], x[0])); }},
      {"mean", fixed({{5, 2}}), [=](V x) { return ops::mean(ops::mul(x[0], x[0])); }},
      {"sum_axis", fixed({{2, 3, 4}}), [=](V x) { return probe(ops::sum_axis(x[0], 1)); }},
      {"mean_axis", fixed({{3, 4}}), [=](V x) { return probe(ops::mean_axis(x[0], 1, true)); }},
      {"concat", fixed({{2, 3}, {2, 2}}),
       [=](V x) {
         Tensor parts[] = {x[0], x[1]};
         return probe(ops::concat(parts, 1));
       }},
      {"slice", fixed({{4, 5}}), [=](V x) { return probe(ops::slice(x[0], 1, 1, 4)); }},
      {"reshape", fixed({{2, 6}}), [=](V x) { return probe(ops::reshape(x[0], {3, 4})); }},
      {"transpose", fixed({{2, 5}}), [=](V x) { return probe(ops::transpose(x[0])); }},
      {"permute", fixed({{2, 3, 4}}), [=](V x) { return probe(ops::permute(x[0], {2, 0, 1})); }},
      {"broadcast", fixed({{3, 1}}), [=](V x) { return probe(ops::broadcast_to(x[0], {2, 3, 4})); }},
      {"exp", fixed({{6}}), [=](V x) { return probe(ops::exp(x[0])); }},
      {"log", fixed({{6}}), [=](V x) { return probe(ops::log(x[0])); }, 0.5, 2.0},
      {"tanh", fixed({{6}}), [=](V x) { return probe(ops::tanh(x[0])); }},
      {"sigmoid", fixed({{6}}), [=](V x) { return probe(ops::sigmoid(x[0])); }},
      {"relu", fixed({{8}}), [=](V x) { return probe(ops::relu(x[0])); }},
      {"sqrt", fixed({{6}}), [=](V x) { return probe(ops::sqrt(x[0])); }, 0.5, 2.0},
      {"maximum", fixed({{6}, {6}}), [=](V x) { return probe(ops::maximum(x[0], x[1])); }},
      {"scale", fixed({{6}}), [=](V x) { return probe(ops::scale(ops::neg(x[0]), 3.0)); }},
      {"gather_rows", fixed({{4, 3}}),
       [=](V x) {
         const int ids[] = {2, 0, 2, 3};
         return probe(ops::gather_rows(x[0], ids));
       }},
  };
  return cases;
}

TEST(GradCheck, EveryForwardOpHundredSeeds) {
  for (const auto& c : op_cases()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      std::vector<Tensor> leaves;
      for (const auto& s : c.shapes(rng)) {
        ASSERT_LE(numel_of(s), 32u);
        leaves.push_back(random_tensor(rng, s, c.lo, c.hi, true));
      }
      worst = std::max(worst, finite_difference_check_params([&] { return c.f(leaves); }, leaves));
    }
    EXPECT_LE(worst, 1e-4) << c.name;
  }
}

TEST(Determinism, BitwiseRepeatable) {
  auto run = [] {
    std::mt19937_64 rng(3);
    auto a = random_tensor(rng, {5, 7});
    auto b = random_tensor(rng, {7, 4});
    return ops::tanh(ops::matmul(a, b));
  };
  EXPECT_TRUE(bitwise_equal(run(), run()));
}

class GemmEquivalence : public ::testing::TestWithParam<std::tuple<bool, bool>> {};

TEST_P(GemmEquivalence, ParallelMatchesSerialBitwise) {
  const auto [ta, tb] = GetParam();
  std::mt19937_64 rng(11);
  const std::size_t m = 67, n = 45, k = 53;
  auto a = random_tensor(rng, {m * k});
  auto b = random_tensor(rng, {k * n});
  std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
  kernels::GemmArgs args{.trans_a = ta ? kernels::Trans::kYes : kernels::Trans::kNo,
                         .trans_b = tb ? kernels::Trans::kYes : kernels::Trans::kNo,
                         .m = m, .n = n, .k = k, .a = a.data().data(), .b = b.data().data(),
                         .accumulate = true};
  args.c = c1.data();
  kernels::serial::gemm(args);
  args.c = c2.data();
  kernels::parallel::gemm(args);
  EXPECT_EQ(c1, c2);
  // Spot check one element against a direct sum.
  double ref = 0.5;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ta ? a.data()[p * m + 3] : a.data()[3 * k + p];
    const double bv = tb ? b.data()[5 * k + p] : b.data()[p * n + 5];
    ref += av * bv;
  }
  EXPECT_NEAR(c1[3 * n + 5], ref, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(AllLayouts, GemmEquivalence,
                         ::testing::Combine(::testing::Bool(), ::testing::Bool()));

}  // namespace
}  // namespace gret
