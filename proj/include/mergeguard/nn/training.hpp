#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mergeguard/autodiff/loss.hpp"
#include "mergeguard/autodiff/ops.hpp"
#include "mergeguard/nn/model.hpp"

namespace mergeguard::nn {

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  // Weight of the linearity penalty sum_i (1 - alpha_i)^2 over trainable
  // activations.
  double lambda = 0.0;
  // Multiplier on the cross-entropy term; tests set it to 0 to isolate the
  // penalty.
  double ce_weight = 1.0;
  // Learning-rate multiplier applied to raw_alpha parameters.
  double alpha_lr_scale = 1.0;
  // Rescales the gradient to this global L2 norm when it is larger; 0
  // disables clipping.
  double grad_clip = 0.0;
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::size_t epoch = 0;
  double cross_entropy = 0.0;
  double regularizer = 0.0;
  double loss = 0.0;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
};

template <typename T>
struct CompositeLoss {
  ad::Var total;
  ad::Var cross_entropy;
  ad::Var regularizer;
};

/// Records ce_weight * CE(logits, labels) + lambda * sum_i (1 - alpha_i)^2,
/// where alpha_i = logistic(raw_alpha_i) for every trainable activation.
template <typename T>
CompositeLoss<T> composite_loss(ad::Tape<T>& tape, const Model& model,
                                std::span<const ad::Var> params, ad::Var input,
                                std::span<const int> labels, double lambda,
                                double ce_weight = 1.0) {
  const ad::Var logits = model.forward(tape, input, params);
  const ad::Var ce = ad::cross_entropy(tape, logits, labels);
  const auto names = model.parameter_names();
  std::vector<ad::Var> penalties;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!names[i].ends_with(".raw_alpha")) continue;
    const ad::Var alpha = ad::logistic(tape, params[i]);
    const ad::Var gap = ad::affine(tape, alpha, T{-1}, T{1});
    penalties.push_back(ad::sum(tape, ad::square(tape, gap)));
  }
  ad::Var reg = tape.constant(BasicTensor<T>::scalar(T{0}));
  for (const ad::Var p : penalties) reg = ad::add(tape, reg, p);
  reg = ad::affine(tape, reg, static_cast<T>(lambda), T{0});
  const ad::Var weighted_ce = ad::affine(tape, ce, static_cast<T>(ce_weight), T{0});
  return {ad::add(tape, weighted_ce, reg), ce, reg};
}

/// Mini-batch SGD with momentum over a shuffled order drawn from
/// options.seed. Throws TrainingError on a non-finite loss or gradient.
TrainHistory train(Model& model, const Tensor& images, std::span<const int> labels,
                   const TrainOptions& options);

}  // namespace mergeguard::nn
