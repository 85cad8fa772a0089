#include "mergeguard/autodiff/optim.hpp"

namespace mergeguard::ad {

SgdState::SgdState(double learning_rate, double momentum)
    : learning_rate_(learning_rate), momentum_(momentum) {
  if (!(learning_rate > 0.0)) {
    throw ContractError("SGD learning rate must be positive, got " +
                        std::to_string(learning_rate));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ContractError("SGD momentum must lie in [0, 1), got " + std::to_string(momentum));
  }
}

void SgdState::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw ContractError("SGD learning rate must be positive");
  learning_rate_ = lr;
}

void sgd_step(std::span<const ParameterRef> params, std::span<const Tensor> grads,
              SgdState& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor->shape() != grads[i].shape()) {
      throw DimensionError("sgd_step: gradient shape " + shape_string(grads[i].shape()) +
                           " for parameter '" + params[i].name + "' of shape " +
                           shape_string(params[i].tensor->shape()));
    }
    if (!grads[i].all_finite()) {
      throw TrainingError("non-finite gradient for parameter '" + params[i].name + "'");
    }
  }
  if (state.velocity_.empty()) {
    state.velocity_.reserve(params.size());
    for (const auto& p : params) state.velocity_.emplace_back(p.tensor->shape());
  }
  if (state.velocity_.size() != params.size()) {
    throw DimensionError("sgd_step: optimizer state tracks " +
                         std::to_string(state.velocity_.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& v = state.velocity_[i];
    if (v.shape() != params[i].tensor->shape()) {
      throw DimensionError("sgd_step: velocity shape mismatch for '" + params[i].name + "'");
    }
    auto p = params[i].tensor->data();
    const auto g = grads[i].data();
    const float mom = static_cast<float>(state.momentum_);
    const float lr = static_cast<float>(state.learning_rate_ * params[i].lr_scale);
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = mom * v[j] + g[j];
      p[j] -= lr * v[j];
    }
  }
}

}  // namespace mergeguard::ad
