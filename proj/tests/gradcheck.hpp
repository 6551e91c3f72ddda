#pragma once

// Random small networks for the finite-difference gradient check.

#include <cstdint>
#include <random>
#include <vector>

#include "test_support.hpp"

namespace oodlab::testing {

struct GradCheck {
  std::size_t parameters = 0;
  double max_relative_error = 0.0;
};

// Two-layer network (width/activation drawn from the seed) with a cross-entropy
// root. Compares every parameter and input gradient against central differences.
inline GradCheck check_random_network(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dim(2, 5);
  const std::size_t n = dim(rng), in = dim(rng), hidden = dim(rng), classes = dim(rng);
  const bool use_sigmoid = seed % 2 == 1;

  std::vector<Tensor> params = {random_tensor({in, hidden}, rng), random_tensor({1, hidden}, rng),
                                random_tensor({hidden, classes}, rng), random_tensor({1, classes}, rng)};
  for (Tensor& p : params) p.set_requires_grad(true);
  Tensor x = random_tensor({n, in}, rng);
  std::vector<int> labels(n);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  for (int& y : labels) y = pick(rng);

  auto build = [&](Graph& g, Var xv) {
    Var h = g.add(g.matmul(xv, g.param(params[0])), g.param(params[1]));
    h = use_sigmoid ? g.sigmoid(h) : g.relu(h);
    Var logits = g.add(g.matmul(h, g.param(params[2])), g.param(params[3]));
    return cross_entropy(g, logits, labels);
  };
  auto loss = [&] {
    Graph g;
    return g.value(build(g, g.input(x))).item();
  };

  Graph g;
  Var xv = g.input(x, true);
  g.backward(build(g, xv));

  GradCheck out;
  for (Tensor& p : params) {
    const auto analytic = g.param_grad(p);
    const auto numeric = central_differences(p, loss);
    out.parameters += p.size();
    out.max_relative_error = std::max(out.max_relative_error, max_relative_error(analytic, numeric));
  }
  const auto numeric_x = central_differences(x, loss);
  out.max_relative_error = std::max(out.max_relative_error, max_relative_error(g.grad(xv), numeric_x));
  return out;
}

}  // namespace oodlab::testing
