#pragma once

#include <cstddef>
#include <string_view>
#include <variant>

#include "mergeguard/autodiff/rng.hpp"
#include "mergeguard/autodiff/tensor.hpp"
#include "mergeguard/nn/activation.hpp"

namespace mergeguard::nn {

/// y = W x + b with W [out x in].
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  std::size_t in() const { return weight.dim(1); }
  std::size_t out() const { return weight.dim(0); }

  /// He-uniform weights, zero bias.
  static DenseLayer init(std::size_t in, std::size_t out, Rng& rng);
  void validate() const;
};

/// Square-kernel cross-correlation with kernel [c_out x c_in x k x k].
struct Conv2dLayer {
  Tensor kernel;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t c_out() const { return kernel.dim(0); }
  std::size_t c_in() const { return kernel.dim(1); }
  std::size_t kernel_size() const { return kernel.dim(2); }

  static Conv2dLayer init(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                          std::size_t padding, Rng& rng);
  void validate() const;
};

/// Activation blended toward the identity by a coefficient alpha.
///
/// A trainable activation stores raw_alpha and derives alpha through the
/// logistic map, so alpha stays in (0, 1) while training. A fixed activation
/// carries a pinned alpha: 0 gives the base nonlinearity, 1 the identity.
struct ParametricActivation {
  ActivationKind kind = ActivationKind::PReLU;
  float beta = 1.0f;  // ELU scale; unused by the other kinds
  bool trainable = false;
  Tensor raw_alpha = Tensor(Shape{1}, 0.0f);
  float fixed_alpha = 0.0f;

  float alpha() const;

  static ParametricActivation base(ActivationKind kind, float beta = 1.0f);
  static ParametricActivation wrapped(ActivationKind kind, double alpha_init, float beta = 1.0f);
  static ParametricActivation pinned(ActivationKind kind, float alpha, float beta = 1.0f);

  float apply(float x) const;
  void validate() const;
};

struct MaxPool2d {
  std::size_t size = 2;
};

struct Flatten {};

using Layer = std::variant<DenseLayer, Conv2dLayer, ParametricActivation, MaxPool2d, Flatten>;

std::string_view layer_kind_name(const Layer& layer);

}  // namespace mergeguard::nn
