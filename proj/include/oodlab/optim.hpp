#pragma once

#include <span>
#include <vector>

#include "oodlab/tensor.hpp"

namespace oodlab {

struct SgdOptions {
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Momentum SGD with coupled weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
/// Velocity buffers are bound to the parameter list seen on the first step.
class Sgd {
 public:
  explicit Sgd(SgdOptions options);

  /// Applies one step using each parameter's grad slot.
  void step(std::span<Tensor* const> params);
  /// Same, with gradients passed explicitly (grads[i] pairs with params[i]).
  void step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads);

  const SgdOptions& options() const noexcept { return options_; }
  const std::vector<std::vector<double>>& velocity() const noexcept { return velocity_; }

 private:
  SgdOptions options_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace oodlab
