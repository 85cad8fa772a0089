#include "mergeguard/merge/blocks.hpp"

#include <algorithm>

#include "mergeguard/autodiff/linalg.hpp"

namespace mergeguard::merge {

bool is_mergeable_at(const nn::Model& model, std::size_t position) {
  const auto& layers = model.layers();
  if (position + 2 >= layers.size()) return false;
  if (!std::holds_alternative<nn::ParametricActivation>(layers[position + 1])) return false;
  const auto* d1 = std::get_if<nn::DenseLayer>(&layers[position]);
  const auto* d2 = std::get_if<nn::DenseLayer>(&layers[position + 2]);
  if (d1 && d2) return d1->out() == d2->in();
  const auto* c1 = std::get_if<nn::Conv2dLayer>(&layers[position]);
  const auto* c2 = std::get_if<nn::Conv2dLayer>(&layers[position + 2]);
  if (c1 && c2) {
    return c1->c_out() == c2->c_in() && c1->stride == 1 && c2->stride == 1 && c2->padding == 0;
  }
  return false;
}

std::vector<MergeableBlock> find_mergeable_blocks(const nn::Model& model) {
  std::vector<MergeableBlock> found;
  // Layers [0, end) are still free; a taken block must end before the
  // previously taken one starts.
  std::size_t end = model.size();
  while (end >= 3) {
    const std::size_t pos = end - 3;
    if (is_mergeable_at(model, pos)) {
      const bool dense = std::holds_alternative<nn::DenseLayer>(model.layer(pos));
      found.push_back({pos, dense ? BlockFamily::Dense : BlockFamily::Conv});
      end = pos;
    } else {
      --end;
    }
  }
  std::reverse(found.begin(), found.end());
  return found;
}

std::vector<MergeableBlock> last_blocks(const nn::Model& model, std::size_t k) {
  auto all = find_mergeable_blocks(model);
  if (all.size() > k) all.erase(all.begin(), all.end() - static_cast<long>(k));
  return all;
}

DenseBlock dense_block(const nn::Model& model, const MergeableBlock& block) {
  if (block.family != BlockFamily::Dense || !is_mergeable_at(model, block.position) ||
      !std::holds_alternative<nn::DenseLayer>(model.layer(block.position))) {
    throw MergeError("no dense block at layer " + std::to_string(block.position));
  }
  return {std::get<nn::DenseLayer>(model.layer(block.position)),
          std::get<nn::ParametricActivation>(model.layer(block.position + 1)),
          std::get<nn::DenseLayer>(model.layer(block.position + 2))};
}

ConvBlock conv_block(const nn::Model& model, const MergeableBlock& block) {
  if (block.family != BlockFamily::Conv || !is_mergeable_at(model, block.position) ||
      !std::holds_alternative<nn::Conv2dLayer>(model.layer(block.position))) {
    throw MergeError("no conv block at layer " + std::to_string(block.position));
  }
  return {std::get<nn::Conv2dLayer>(model.layer(block.position)),
          std::get<nn::ParametricActivation>(model.layer(block.position + 1)),
          std::get<nn::Conv2dLayer>(model.layer(block.position + 2))};
}

Tensor dense_forward(const nn::DenseLayer& layer, const Tensor& x) {
  layer.validate();
  require_rank(x, 2, "dense_forward input");
  if (x.dim(1) != layer.in()) throw DimensionError("dense_forward: input width mismatch");
  Tensor y({x.dim(0), layer.out()});
  linalg::gemm<float>(false, true, x.dim(0), layer.out(), layer.in(), x.data(),
                      layer.weight.data(), y.data(), false);
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < layer.out(); ++j) y(i, j) += layer.bias[j];
  return y;
}

Tensor conv_forward(const nn::Conv2dLayer& layer, const Tensor& x) {
  return nn::conv2d_forward(x, layer.kernel, layer.bias, layer.stride, layer.padding);
}

namespace {

void apply_inplace(const nn::ParametricActivation& act, Tensor& t) {
  for (float& v : t.data()) v = act.apply(v);
}

}  // namespace

Tensor dense_block_forward(const DenseBlock& block, const Tensor& x) {
  Tensor h = dense_forward(block.first, x);
  apply_inplace(block.activation, h);
  return dense_forward(block.second, h);
}

Tensor conv_block_forward(const ConvBlock& block, const Tensor& x) {
  Tensor h = conv_forward(block.first, x);
  apply_inplace(block.activation, h);
  return conv_forward(block.second, h);
}

}  // namespace mergeguard::merge
