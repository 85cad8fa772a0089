#include "mergeguard/nn/model.hpp"

#include <algorithm>
#include <cstring>

namespace mergeguard::nn {

Model::Model(Shape input_shape, std::size_t classes)
    : input_shape_(std::move(input_shape)), classes_(classes) {
  if (input_shape_.empty() || shape_size(input_shape_) == 0) {
    throw DimensionError("model input shape must be non-empty");
  }
  if (classes_ < 2) throw DimensionError("model needs at least two classes");
}

Shape Model::infer_output(const Layer& layer, const Shape& in, std::size_t index) const {
  const std::string where = "layer " + std::to_string(index) + " (" +
                            std::string(layer_kind_name(layer)) + "): ";
  if (const auto* d = std::get_if<DenseLayer>(&layer)) {
    d->validate();
    if (in.size() != 1 || in[0] != d->in()) {
      throw DimensionError(where + "expects [" + std::to_string(d->in()) + "] input, got " +
                           shape_string(in));
    }
    return {d->out()};
  }
  if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
    c->validate();
    if (in.size() != 3 || in[0] != c->c_in()) {
      throw DimensionError(where + "expects [" + std::to_string(c->c_in()) +
                           "xHxW] input, got " + shape_string(in));
    }
    return {c->c_out(), conv_output_extent(in[1], c->kernel_size(), c->stride, c->padding),
            conv_output_extent(in[2], c->kernel_size(), c->stride, c->padding)};
  }
  if (const auto* a = std::get_if<ParametricActivation>(&layer)) {
    a->validate();
    return in;
  }
  if (const auto* m = std::get_if<MaxPool2d>(&layer)) {
    if (in.size() != 3) throw DimensionError(where + "expects a CxHxW input");
    if (m->size == 0 || in[1] < m->size || in[2] < m->size) {
      throw DimensionError(where + "window does not fit " + shape_string(in));
    }
    return {in[0], in[1] / m->size, in[2] / m->size};
  }
  return {shape_size(in)};
}

std::vector<Shape> Model::shapes() const {
  std::vector<Shape> out{input_shape_};
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.push_back(infer_output(layers_[i], out.back(), i));
  }
  return out;
}

void Model::validate() const {
  const auto s = shapes();
  if (s.back() != Shape{classes_}) {
    throw DimensionError("model output " + shape_string(s.back()) + " is not [" +
                         std::to_string(classes_) + "]");
  }
}

void Model::add(Layer layer) {
  Shape in = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) in = infer_output(layers_[i], in, i);
  infer_output(layer, in, layers_.size());
  layers_.push_back(std::move(layer));
}

void Model::replace(std::size_t first, std::size_t count, Layer replacement) {
  if (first + count > layers_.size()) throw DimensionError("replace: range out of bounds");
  std::vector<Layer> next;
  next.reserve(layers_.size() - count + 1);
  next.insert(next.end(), layers_.begin(), layers_.begin() + static_cast<long>(first));
  next.push_back(std::move(replacement));
  next.insert(next.end(), layers_.begin() + static_cast<long>(first + count), layers_.end());
  std::swap(layers_, next);
  try {
    validate();
  } catch (...) {
    std::swap(layers_, next);
    throw;
  }
}

std::vector<std::string> Model::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = std::to_string(i) + ".";
    if (std::holds_alternative<DenseLayer>(layers_[i])) {
      names.push_back(prefix + "weight");
      names.push_back(prefix + "bias");
    } else if (std::holds_alternative<Conv2dLayer>(layers_[i])) {
      names.push_back(prefix + "kernel");
      names.push_back(prefix + "bias");
    } else if (const auto* a = std::get_if<ParametricActivation>(&layers_[i])) {
      if (a->trainable) names.push_back(prefix + "raw_alpha");
    }
  }
  return names;
}

std::vector<ad::ParameterRef> Model::parameters(double alpha_lr_scale) {
  std::vector<ad::ParameterRef> refs;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = std::to_string(i) + ".";
    if (auto* d = std::get_if<DenseLayer>(&layers_[i])) {
      refs.push_back({prefix + "weight", &d->weight, 1.0});
      refs.push_back({prefix + "bias", &d->bias, 1.0});
    } else if (auto* c = std::get_if<Conv2dLayer>(&layers_[i])) {
      refs.push_back({prefix + "kernel", &c->kernel, 1.0});
      refs.push_back({prefix + "bias", &c->bias, 1.0});
    } else if (auto* a = std::get_if<ParametricActivation>(&layers_[i])) {
      if (a->trainable) refs.push_back({prefix + "raw_alpha", &a->raw_alpha, alpha_lr_scale});
    }
  }
  return refs;
}

Tensor Model::logits(const Tensor& batch, std::size_t chunk) const {
  const std::size_t n = batch.rank() == 0 ? 0 : batch.dim(0);
  Tensor out({n, classes_});
  const auto params = parameter_values<float>();
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    ad::Tape<float> tape;
    const auto vars = bind(tape, params, false);
    const ad::Var x = tape.constant(slice_rows(batch, begin, end));
    const ad::Var y = forward(tape, x, vars);
    const auto& yv = tape.value(y);
    std::copy(yv.data().begin(), yv.data().end(), out.data().begin() + begin * classes_);
  }
  return out;
}

Tensor Model::activations(const Tensor& batch, std::size_t layer_count, std::size_t chunk) const {
  if (layer_count > layers_.size()) {
    throw DimensionError("activations: model has " + std::to_string(layers_.size()) + " layers, " +
                         std::to_string(layer_count) + " requested");
  }
  const std::size_t n = batch.rank() == 0 ? 0 : batch.dim(0);
  Shape shape{n};
  const Shape per = shapes().at(layer_count);
  shape.insert(shape.end(), per.begin(), per.end());
  Tensor out(shape);
  std::size_t per_size = 1;
  for (const auto d : per) per_size *= d;
  const auto params = parameter_values<float>();
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    ad::Tape<float> tape;
    const auto vars = bind(tape, params, false);
    const ad::Var x = tape.constant(slice_rows(batch, begin, end));
    const ad::Var y = forward(tape, x, vars, layer_count);
    const auto& yv = tape.value(y);
    std::copy(yv.data().begin(), yv.data().end(), out.data().begin() + begin * per_size);
  }
  return out;
}

std::vector<int> Model::predict(const Tensor& batch, std::size_t chunk) const {
  const Tensor l = logits(batch, chunk);
  const std::size_t n = l.dim(0);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = l.data().data() + i * classes_;
    labels[i] = static_cast<int>(std::max_element(row, row + classes_) - row);
  }
  return labels;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || end > t.dim(0) || begin > end) {
    throw DimensionError("slice_rows: bad range on " + shape_string(t.shape()));
  }
  Shape shape = t.shape();
  const std::size_t row = t.size() / std::max<std::size_t>(shape[0], 1);
  shape[0] = end - begin;
  std::vector<float> data(t.data().begin() + static_cast<long>(begin * row),
                          t.data().begin() + static_cast<long>(end * row));
  return Tensor(std::move(shape), std::move(data));
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Shape shape = t.shape();
  const std::size_t row = shape[0] == 0 ? 0 : t.size() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= t.dim(0)) throw DimensionError("gather_rows: index out of range");
    std::memcpy(out.data().data() + i * row, t.data().data() + rows[i] * row, row * sizeof(float));
  }
  return out;
}

}  // namespace mergeguard::nn
