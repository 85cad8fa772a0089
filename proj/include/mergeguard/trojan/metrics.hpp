#pragma once

#include <cstdint>
#include <span>

#include "mergeguard/nn/model.hpp"
#include "mergeguard/trojan/dataset.hpp"

namespace mergeguard::trojan {

/// Fraction of samples whose true label differs from `target` that are
/// predicted as `target`. Samples of the target class are skipped.
double attack_success_rate(std::span<const int> predictions, std::span<const int> true_labels,
                           int target);
double attack_success_rate(const nn::Model& model, const LabeledImageSet& triggered, int target);

double test_accuracy(std::span<const int> predictions, std::span<const int> labels);
double test_accuracy(const nn::Model& model, const LabeledImageSet& clean);

/// conv(c -> 8, 3x3) -> ReLU -> maxpool 2 -> flatten -> dense(hidden) ->
/// PReLU(alpha = 0) -> dense(classes).
nn::Model victim_model(const Shape& sample_shape, std::size_t classes, std::uint64_t seed,
                       std::size_t hidden = 64);

}  // namespace mergeguard::trojan
