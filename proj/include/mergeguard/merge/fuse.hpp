#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mergeguard/merge/blocks.hpp"

namespace mergeguard::merge {

/// Folds two dense layers into one: W = W2 W1, b = W2 b1 + b2. The
/// activation is ignored; the result equals the block only when alpha = 1.
nn::DenseLayer merge_dense(const DenseBlock& block);

/// Folds two stride-1 convolutions into one of kernel size k1 + k2 - 1 and
/// padding p1. Each merged tap is the sum over hidden channels of products
/// of first- and second-layer taps whose offsets add up to it; the bias is
/// b2 + sum over hidden channels of b1 times the second kernel's tap sum.
/// The second layer must be unpadded: zero padding between the layers
/// would not commute with the fold.
nn::Conv2dLayer merge_conv(const ConvBlock& block);

struct MergeRecord {
  std::size_t position = 0;
  BlockFamily family = BlockFamily::Dense;
  double alpha = 0.0;  // before snapping
  bool merged = false;
  // Weight-only parameter counts of the block and the fused layer.
  std::size_t weights_block = 0;
  std::size_t weights_fused = 0;
  std::size_t params_block = 0;  // weights + biases
  std::size_t params_fused = 0;
  double compression_ratio = 0.0;  // closed-form CR of the block dims
  double weight_reduction = 0.0;   // 1 - weights_fused / weights_block
  std::size_t kernel_size = 0;     // conv blocks only
};

/// Pins alpha to exactly 1 for every listed block whose alpha is at least
/// `threshold`; returns which blocks were snapped.
std::vector<bool> snap_alphas(nn::Model& model, std::span<const MergeableBlock> blocks,
                              double threshold);

/// Replaces one block (whose activation must be pinned to 1) by its fused
/// layer.
MergeRecord fuse_block(nn::Model& model, const MergeableBlock& block);

/// Snaps and fuses every listed block with alpha >= threshold; blocks below
/// the threshold are left untouched. Records come back in model order.
std::vector<MergeRecord> finalize_merge(nn::Model& model, std::span<const MergeableBlock> blocks,
                                        double threshold);

}  // namespace mergeguard::merge
