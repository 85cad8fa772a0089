#pragma once

#include <span>
#include <string>
#include <vector>

#include "mergeguard/autodiff/tensor.hpp"

namespace mergeguard::ad {

/// A named, mutable view of one trainable tensor.
struct ParameterRef {
  std::string name;
  Tensor* tensor = nullptr;
  double lr_scale = 1.0;
};

/// Classic (heavy-ball) momentum SGD state. Velocity buffers are created on
/// the first step and must keep matching the parameter shapes afterwards.
class SgdState {
 public:
  SgdState(double learning_rate, double momentum);

  double learning_rate() const noexcept { return learning_rate_; }
  double momentum() const noexcept { return momentum_; }
  void set_learning_rate(double lr);
  const std::vector<Tensor>& velocity() const noexcept { return velocity_; }

  friend void sgd_step(std::span<const ParameterRef> params, std::span<const Tensor> grads,
                       SgdState& state);

 private:
  double learning_rate_;
  double momentum_;
  std::vector<Tensor> velocity_;
};

/// v <- momentum * v + g;  p <- p - lr * lr_scale * v.
/// Throws TrainingError naming the parameter if any gradient is non-finite;
/// in that case no parameter is modified.
void sgd_step(std::span<const ParameterRef> params, std::span<const Tensor> grads,
              SgdState& state);

}  // namespace mergeguard::ad
