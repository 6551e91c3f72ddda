#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "oodlab/errors.hpp"
#include "oodlab/optim.hpp"
#include "oodlab/tensor.hpp"
#include "test_support.hpp"

namespace oodlab {
namespace {

using testing::central_differences;
using testing::max_relative_error;
using testing::random_tensor;

TEST(Tensor, SoftmaxOfUniformLogitsIsUniform) {
  Graph g;
  const Tensor& p = g.value(g.softmax(g.constant(Tensor::row({0, 0, 0, 0}))));
  for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Tensor, ReluZeroesNegatives) {
  Graph g;
  EXPECT_EQ(g.value(g.relu(g.constant(Tensor::row({-1, 0, 2})))), Tensor::row({0, 0, 2}));
}

TEST(Tensor, ConcatJoinsFeatureAxis) {
  Graph g;
  const Var parts[] = {g.constant(Tensor::row({1, 2})), g.constant(Tensor::row({3}))};
  EXPECT_EQ(g.value(g.concat(parts)), Tensor::row({1, 2, 3}));
}

TEST(Tensor, CrossEntropyOfUniformLogitsIsLogC) {
  for (int label = 0; label < 4; ++label) {
    Graph g;
    const int labels[] = {label};
    EXPECT_NEAR(g.value(cross_entropy(g, g.constant(Tensor::row({0, 0, 0, 0})), labels)).item(),
                std::log(4.0), 1e-12);
  }
}

TEST(Tensor, CrossEntropyOfConfidentCorrectLogitIsTiny) {
  Graph g;
  const int labels[] = {0};
  const double loss = g.value(cross_entropy(g, g.constant(Tensor::row({10, -10})), labels)).item();
  // -log(e^10 / (e^10 + e^-10)) = log1p(e^-20)
  EXPECT_NEAR(loss, std::log1p(std::exp(-20.0)), 1e-20);
  EXPECT_NEAR(loss, 2.06e-9, 1e-11);
}

TEST(Tensor, CrossEntropyFavoringTheLabelBeatsUniform) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z = random_tensor({1, 4}, rng);
    const int label = trial % 4;
    for (std::size_t c = 0; c < 4; ++c) z[c] = std::min(z[c], 0.0);
    z[static_cast<std::size_t>(label)] = 1.0 + std::abs(z[0]);
    const int labels[] = {label};
    EXPECT_LT(cross_entropy_rows(z, labels)[0], std::log(4.0));
  }
}

TEST(Tensor, CrossEntropyRejectsOutOfRangeLabel) {
  Graph g;
  const int labels[] = {4};
  EXPECT_THROW(cross_entropy(g, g.constant(Tensor::row({0, 0, 0, 0})), labels), ValidationError);
}

TEST(Tensor, SquareHasGradientTwoX) {
  Graph g;
  Var x = g.input(Tensor::scalar(3.0), true);
  Var y = g.sum(g.mul(x, x));
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 6.0);
}

TEST(Tensor, LinearMapGradientBroadcastsVectorPerRow) {
  Tensor w({2, 3}, {1, -2, 3, 0.5, 4, -1});
  w.set_requires_grad(true);
  const Tensor v({3, 1}, {0.3, -0.7, 2.0});
  Graph g;
  g.backward(g.sum(g.matmul(g.param(w), g.constant(v))));
  const auto dw = g.param_grad(w);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(dw[r * 3 + c], v[c]);
  }
}

TEST(Tensor, TwentyParameterNetworkMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  Tensor w1 = random_tensor({3, 3}, rng), b1 = random_tensor({1, 3}, rng);
  Tensor w2 = random_tensor({3, 2}, rng), b2 = random_tensor({1, 2}, rng);
  std::vector<Tensor*> params = {&w1, &b1, &w2, &b2};
  std::size_t count = 0;
  for (Tensor* p : params) {
    p->set_requires_grad(true);
    count += p->size();
  }
  ASSERT_EQ(count, 20u);
  const Tensor x = random_tensor({4, 3}, rng);
  const std::vector<int> labels = {0, 1, 1, 0};
  auto build = [&](Graph& g) {
    Var h = g.relu(g.add(g.matmul(g.constant(x), g.param(w1)), g.param(b1)));
    return cross_entropy(g, g.add(g.matmul(h, g.param(w2)), g.param(b2)), labels);
  };
  auto loss = [&] {
    Graph g;
    return g.value(build(g)).item();
  };
  Graph g;
  g.backward(build(g));
  for (Tensor* p : params) {
    EXPECT_LT(max_relative_error(g.param_grad(*p), central_differences(*p, loss)), 1e-4);
  }
}

TEST(Tensor, RandomNetworksMatchFiniteDifferences) {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    const auto r = testing::check_random_network(seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
    EXPECT_LE(r.parameters, 1000u);
  }
}

TEST(Tensor, EveryPrimitiveMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor c = random_tensor({4, 2}, rng);
  for (Tensor* t : {&a, &b, &c}) t->set_requires_grad(true);
  auto build = [&](Graph& g) {
    Var av = g.param(a), bv = g.param(b), cv = g.param(c);
    Var s = g.sigmoid(g.mul(av, bv));
    const Var parts[] = {g.slice(s, 1, 3), g.relu(bv)};
    Var joined = g.concat(parts);                      // [3 x 6]
    Var m = g.matmul(g.add(av, g.scale(bv, 0.5)), cv);  // [3 x 2]
    Var p = g.softmax(m);
    Var lp = g.log_softmax(joined);
    Var l = g.log(g.add(p, g.constant(Tensor({3, 2}, 0.1))));
    return g.add(g.add(g.sum(l), g.mean(lp)), g.sum(g.mul(g.slice(joined, 0, 2), m)));
  };
  auto value = [&] {
    Graph g;
    return g.value(build(g)).item();
  };
  Graph g;
  g.backward(build(g));
  for (Tensor* t : {&a, &b, &c}) {
    EXPECT_LT(max_relative_error(g.param_grad(*t), central_differences(*t, value)), 1e-4);
  }
}

TEST(Tensor, SoftmaxRowsAreProbabilityVectors) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor p = softmax_rows(random_tensor({5, 4}, rng, 5.0));
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_GT(p.at(r, c), 0.0);
        EXPECT_LT(p.at(r, c), 1.0);
        total += p.at(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Tensor, NonScalarRootIsAContractError) {
  Graph g;
  Var x = g.input(Tensor::row({1, 2}), true);
  EXPECT_THROW(g.backward(g.relu(x)), ContractError);
}

TEST(Tensor, ShapeMismatchNamesThePrimitive) {
  Graph g;
  Var a = g.constant(Tensor({2, 3}, 1.0));
  Var b = g.constant(Tensor({2, 3}, 1.0));
  try {
    g.matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
}

TEST(Tensor, UnrelatedLeafGetsZeroGradient) {
  Graph g;
  Var x = g.input(Tensor::row({1, 2}), true);
  Var unused = g.input(Tensor::row({5, 6, 7}), true);
  g.backward(g.sum(g.mul(x, x)));
  for (double v : g.grad(unused)) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, NonFiniteResultIsANumericError) {
  Graph g;
  EXPECT_THROW(g.log(g.constant(Tensor::row({0.0}))), NumericError);
}

TEST(Tensor, ArgmaxBreaksTiesTowardLowestIndex) {
  const Tensor t({2, 3}, {1, 3, 3, 2, 2, 2});
  EXPECT_EQ(argmax_rows(t), (std::vector<int>{1, 0}));
}

TEST(Tensor, IdenticalInputsGiveBitIdenticalGradients) {
  auto run = [] {
    std::mt19937_64 rng(21);
    Tensor w = random_tensor({4, 3}, rng);
    w.set_requires_grad(true);
    const Tensor x = random_tensor({6, 4}, rng);
    Graph g;
    const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    g.backward(cross_entropy(g, g.matmul(g.constant(x), g.param(w)), labels));
    return g.param_grad(w);
  };
  EXPECT_EQ(run(), run());
}

// ---------------------------------------------------------------------------

TEST(Sgd, VanillaStep) {
  Tensor p = Tensor::scalar(1.0);
  Sgd opt({1.0, 0.0, 0.0});
  Tensor* params[] = {&p};
  const std::vector<double> grads[] = {{0.5}};
  opt.step(params, grads);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
}

TEST(Sgd, ZeroGradientIsAFixedPoint) {
  Tensor p = Tensor::scalar(1.25);
  Sgd opt({0.1, 0.9, 0.0});
  Tensor* params[] = {&p};
  const std::vector<double> grads[] = {{0.0}};
  opt.step(params, grads);
  EXPECT_EQ(p[0], 1.25);
}

TEST(Sgd, MomentumAccumulatesConstantGradient) {
  const double lr = 0.1, g = 0.3;
  Tensor p = Tensor::scalar(2.0);
  Sgd opt({lr, 0.9, 0.0});
  Tensor* params[] = {&p};
  const std::vector<double> grads[] = {{g}};
  double before = p[0];
  opt.step(params, grads);
  EXPECT_NEAR(before - p[0], lr * g, 1e-15);
  before = p[0];
  opt.step(params, grads);
  EXPECT_NEAR(before - p[0], lr * g * 1.9, 1e-15);
}

TEST(Sgd, WeightDecayIsCoupledIntoTheGradient) {
  Tensor p = Tensor::scalar(2.0);
  Sgd opt({0.5, 0.0, 0.1});
  Tensor* params[] = {&p};
  const std::vector<double> grads[] = {{0.0}};
  opt.step(params, grads);
  EXPECT_DOUBLE_EQ(p[0], 2.0 - 0.5 * 0.1 * 2.0);
}

TEST(Sgd, GradientShapeMismatchIsRejected) {
  Tensor p({2}, 1.0);
  Sgd opt({});
  Tensor* params[] = {&p};
  const std::vector<double> grads[] = {{1.0}};
  EXPECT_THROW(opt.step(params, grads), ValidationError);
}

}  // namespace
}  // namespace oodlab
