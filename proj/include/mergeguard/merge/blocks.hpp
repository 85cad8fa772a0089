#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mergeguard/nn/model.hpp"

namespace mergeguard::merge {

enum class BlockFamily { Dense, Conv };

/// Location of a [linear, activation, linear] triple inside a model; the
/// block occupies layers position .. position + 2.
struct MergeableBlock {
  std::size_t position = 0;
  BlockFamily family = BlockFamily::Dense;

  friend bool operator==(const MergeableBlock&, const MergeableBlock&) = default;
};

struct DenseBlock {
  nn::DenseLayer first;
  nn::ParametricActivation activation;
  nn::DenseLayer second;
};

struct ConvBlock {
  nn::Conv2dLayer first;
  nn::ParametricActivation activation;
  nn::Conv2dLayer second;
};

/// True when the triple starting at `position` can be fused: same layer
/// family on both sides, composing shapes, and for convolutions stride 1
/// on both layers with no padding on the second.
bool is_mergeable_at(const nn::Model& model, std::size_t position);

/// Non-overlapping mergeable blocks in model order. Overlapping candidates
/// are resolved greedily from the output end.
std::vector<MergeableBlock> find_mergeable_blocks(const nn::Model& model);

/// The last `k` entries of find_mergeable_blocks(), in model order.
std::vector<MergeableBlock> last_blocks(const nn::Model& model, std::size_t k);

DenseBlock dense_block(const nn::Model& model, const MergeableBlock& block);
ConvBlock conv_block(const nn::Model& model, const MergeableBlock& block);

/// Block output W2 f_alpha(W1 x + b1) + b2 for x [n x in], in float.
Tensor dense_block_forward(const DenseBlock& block, const Tensor& x);

/// Sequential conv -> activation -> conv on an NCHW batch.
Tensor conv_block_forward(const ConvBlock& block, const Tensor& x);

Tensor dense_forward(const nn::DenseLayer& layer, const Tensor& x);
Tensor conv_forward(const nn::Conv2dLayer& layer, const Tensor& x);

}  // namespace mergeguard::merge
