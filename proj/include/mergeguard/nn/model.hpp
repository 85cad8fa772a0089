#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mergeguard/autodiff/ops.hpp"
#include "mergeguard/autodiff/optim.hpp"
#include "mergeguard/autodiff/tape.hpp"
#include "mergeguard/nn/conv.hpp"
#include "mergeguard/nn/layers.hpp"

namespace mergeguard::nn {

/// Sequential classifier. Shapes are checked whenever the layer list changes,
/// so a constructed model always composes from its per-sample input shape
/// down to a logit vector of length classes().
///
/// Parameters are addressed in a canonical order: by layer, then weight
/// before bias; trainable activations contribute their raw_alpha. Names have
/// the form "<layer>.<field>", e.g. "4.weight" or "5.raw_alpha".
class Model {
 public:
  Model() = default;
  Model(Shape input_shape, std::size_t classes);

  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t classes() const noexcept { return classes_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return layers_.size(); }

  void add(Layer layer);
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  /// Replaces layers [first, first + count) by `replacement` and revalidates;
  /// on failure the model is left unchanged.
  void replace(std::size_t first, std::size_t count, Layer replacement);

  /// shapes()[i] is the per-sample input shape of layer i; the final entry
  /// is the output shape.
  std::vector<Shape> shapes() const;

  /// Throws DimensionError unless the layers compose to a [classes] output.
  void validate() const;

  std::vector<std::string> parameter_names() const;
  std::vector<ad::ParameterRef> parameters(double alpha_lr_scale = 1.0);

  template <typename T>
  std::vector<BasicTensor<T>> parameter_values() const;

  /// Records the forward pass on `tape`. `params` are nodes holding the
  /// canonical parameters (see bind()). With `layer_count` set, only the
  /// first layer_count layers run and trailing parameters are ignored.
  template <typename T>
  ad::Var forward(ad::Tape<T>& tape, ad::Var input, std::span<const ad::Var> params,
                  std::size_t layer_count = static_cast<std::size_t>(-1)) const;

  /// Pushes the canonical parameters onto the tape as variables (or
  /// constants) and returns their handles.
  template <typename T>
  static std::vector<ad::Var> bind(ad::Tape<T>& tape, std::vector<BasicTensor<T>> values,
                                   bool requires_grad);

  /// Inference: logits for a [n x input_shape...] batch, evaluated in slices.
  Tensor logits(const Tensor& batch, std::size_t chunk = 256) const;
  std::vector<int> predict(const Tensor& batch, std::size_t chunk = 256) const;

  /// Output of the first `layer_count` layers, i.e. the input of layer
  /// layer_count, shaped [n x shapes()[layer_count]...].
  Tensor activations(const Tensor& batch, std::size_t layer_count, std::size_t chunk = 256) const;

 private:
  Shape infer_output(const Layer& layer, const Shape& in, std::size_t index) const;

  Shape input_shape_;
  std::size_t classes_ = 0;
  std::vector<Layer> layers_;
};

/// Copies rows [begin, end) of the leading axis.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);

/// Gathers the listed rows of the leading axis.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);

// ---------------------------------------------------------------------------

template <typename T>
std::vector<BasicTensor<T>> Model::parameter_values() const {
  std::vector<BasicTensor<T>> out;
  for (const Layer& layer : layers_) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      out.push_back(d->weight.cast<T>());
      out.push_back(d->bias.cast<T>());
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      out.push_back(c->kernel.cast<T>());
      out.push_back(c->bias.cast<T>());
    } else if (const auto* a = std::get_if<ParametricActivation>(&layer)) {
      if (a->trainable) out.push_back(a->raw_alpha.cast<T>());
    }
  }
  return out;
}

template <typename T>
std::vector<ad::Var> Model::bind(ad::Tape<T>& tape, std::vector<BasicTensor<T>> values,
                                 bool requires_grad) {
  std::vector<ad::Var> vars;
  vars.reserve(values.size());
  for (auto& v : values) {
    vars.push_back(requires_grad ? tape.variable(std::move(v)) : tape.constant(std::move(v)));
  }
  return vars;
}

template <typename T>
ad::Var Model::forward(ad::Tape<T>& tape, ad::Var input, std::span<const ad::Var> params,
                       std::size_t layer_count) const {
  const auto& iv = tape.value(input);
  if (iv.rank() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), iv.shape().begin() + 1)) {
    throw DimensionError("model input " + shape_string(iv.shape()) + " does not match [n x " +
                         shape_string(input_shape_) + "]");
  }
  const std::size_t batch = iv.dim(0);
  std::size_t p = 0;
  auto next = [&]() -> ad::Var {
    if (p >= params.size()) throw DimensionError("model forward: too few parameter nodes");
    return params[p++];
  };
  ad::Var x = input;
  const std::size_t run = std::min(layer_count, layers_.size());
  for (std::size_t li = 0; li < run; ++li) {
    const Layer& layer = layers_[li];
    if (std::holds_alternative<DenseLayer>(layer)) {
      const ad::Var w = next();
      const ad::Var b = next();
      x = ad::linear(tape, x, w, b);
    } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
      const ad::Var k = next();
      const ad::Var b = next();
      x = ops::conv2d(tape, x, k, b, c->stride, c->padding);
    } else if (const auto* a = std::get_if<ParametricActivation>(&layer)) {
      ad::Var alpha = a->trainable ? ad::logistic(tape, next())
                                   : tape.constant(BasicTensor<T>::scalar(
                                         static_cast<T>(a->fixed_alpha)));
      x = ops::activation(tape, x, alpha, a->kind, static_cast<T>(a->beta));
    } else if (const auto* m = std::get_if<MaxPool2d>(&layer)) {
      x = ops::maxpool2d(tape, x, m->size);
    } else {
      const std::size_t features = tape.value(x).size() / std::max<std::size_t>(batch, 1);
      x = ad::reshape(tape, x, Shape{batch, features});
    }
  }
  if (run == layers_.size() && p != params.size()) throw DimensionError("model forward: unused parameter nodes");
  return x;
}

}  // namespace mergeguard::nn
