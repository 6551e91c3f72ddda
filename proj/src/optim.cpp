#include "oodlab/optim.hpp"

#include <string>

#include "oodlab/errors.hpp"

namespace oodlab {

Sgd::Sgd(SgdOptions options) : options_(options) {
  if (!(options_.lr > 0.0)) throw ValidationError("sgd: learning rate must be positive");
  if (options_.momentum < 0.0 || options_.weight_decay < 0.0) {
    throw ValidationError("sgd: momentum and weight decay must be non-negative");
  }
}

void Sgd::step(std::span<Tensor* const> params) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (Tensor* p : params) {
    if (!p->has_grad()) throw ValidationError("sgd: parameter has no gradient");
    auto g = p->grad();
    grads.emplace_back(g.begin(), g.end());
  }
  step(params, grads);
}

void Sgd::step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads) {
  if (params.size() != grads.size()) {
    throw ValidationError("sgd: " + std::to_string(params.size()) + " parameters but " +
                          std::to_string(grads.size()) + " gradients");
  }
  if (velocity_.empty()) {
    velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) velocity_[i].assign(params[i]->size(), 0.0);
  }
  if (velocity_.size() != params.size()) {
    throw ValidationError("sgd: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->values();
    const auto& g = grads[i];
    auto& v = velocity_[i];
    if (g.size() != w.size() || v.size() != w.size()) {
      throw ValidationError("sgd: gradient shape mismatch for parameter " + std::to_string(i));
    }
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = options_.momentum * v[j] + g[j] + options_.weight_decay * w[j];
      w[j] -= options_.lr * v[j];
    }
  }
}

}  // namespace oodlab
