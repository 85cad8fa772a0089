#include "mergeguard/nn/layers.hpp"

#include <cmath>

namespace mergeguard::nn {

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::PReLU:
      return "prelu";
    case ActivationKind::ELU:
      return "elu";
    case ActivationKind::GELU:
      return "gelu";
    case ActivationKind::SiLU:
      return "silu";
  }
  return "unknown";
}

ActivationKind activation_kind_from_string(std::string_view name) {
  if (name == "prelu" || name == "relu") return ActivationKind::PReLU;
  if (name == "elu") return ActivationKind::ELU;
  if (name == "gelu") return ActivationKind::GELU;
  if (name == "silu") return ActivationKind::SiLU;
  throw ConfigError("unknown activation kind '" + std::string(name) + "'");
}

DenseLayer DenseLayer::init(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer layer{Tensor({out, in}), Tensor({out})};
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  for (float& w : layer.weight.data()) w = static_cast<float>(rng.uniform(-bound, bound));
  return layer;
}

void DenseLayer::validate() const {
  require_rank(weight, 2, "dense weight");
  if (bias.rank() != 1 || bias.size() != weight.dim(0)) {
    throw DimensionError("dense: bias shape " + shape_string(bias.shape()) +
                         " does not match weight rows " + std::to_string(weight.dim(0)));
  }
}

Conv2dLayer Conv2dLayer::init(std::size_t c_in, std::size_t c_out, std::size_t k,
                              std::size_t stride, std::size_t padding, Rng& rng) {
  Conv2dLayer layer{Tensor({c_out, c_in, k, k}), Tensor({c_out}), stride, padding};
  const double bound = std::sqrt(6.0 / static_cast<double>(c_in * k * k));
  for (float& w : layer.kernel.data()) w = static_cast<float>(rng.uniform(-bound, bound));
  return layer;
}

void Conv2dLayer::validate() const {
  require_rank(kernel, 4, "conv kernel");
  if (kernel.dim(2) != kernel.dim(3)) throw DimensionError("conv: kernels must be square");
  if (bias.rank() != 1 || bias.size() != kernel.dim(0)) {
    throw DimensionError("conv: bias shape " + shape_string(bias.shape()) +
                         " does not match output channels " + std::to_string(kernel.dim(0)));
  }
  if (stride == 0) throw DimensionError("conv: stride must be positive");
}

float ParametricActivation::alpha() const {
  return trainable ? clamp_alpha(raw_alpha[0]) : fixed_alpha;
}

ParametricActivation ParametricActivation::base(ActivationKind kind, float beta) {
  return pinned(kind, 0.0f, beta);
}

ParametricActivation ParametricActivation::wrapped(ActivationKind kind, double alpha_init,
                                                   float beta) {
  if (!(alpha_init > 0.0 && alpha_init < 1.0)) {
    throw ContractError("initial alpha must lie in (0, 1)");
  }
  ParametricActivation act;
  act.kind = kind;
  act.beta = beta;
  act.trainable = true;
  act.raw_alpha = Tensor(Shape{1}, static_cast<float>(alpha_logit(alpha_init)));
  return act;
}

ParametricActivation ParametricActivation::pinned(ActivationKind kind, float alpha, float beta) {
  ParametricActivation act;
  act.kind = kind;
  act.beta = beta;
  act.trainable = false;
  act.fixed_alpha = alpha;
  return act;
}

float ParametricActivation::apply(float x) const {
  return evaluate_activation<float>(kind, x, alpha(), beta).value;
}

void ParametricActivation::validate() const {
  if (raw_alpha.size() != 1) throw DimensionError("activation: raw_alpha must be a scalar");
  if (kind == ActivationKind::ELU && !(beta > 0.0f)) {
    throw ContractError("ELU beta must be positive");
  }
  if (!trainable && !(fixed_alpha >= 0.0f && fixed_alpha <= 1.0f)) {
    throw ContractError("pinned alpha must lie in [0, 1]");
  }
}

std::string_view layer_kind_name(const Layer& layer) {
  struct Visitor {
    std::string_view operator()(const DenseLayer&) const { return "dense"; }
    std::string_view operator()(const Conv2dLayer&) const { return "conv2d"; }
    std::string_view operator()(const ParametricActivation&) const { return "activation"; }
    std::string_view operator()(const MaxPool2d&) const { return "maxpool2d"; }
    std::string_view operator()(const Flatten&) const { return "flatten"; }
  };
  return std::visit(Visitor{}, layer);
}

}  // namespace mergeguard::nn
