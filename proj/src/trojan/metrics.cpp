#include "mergeguard/trojan/metrics.hpp"

namespace mergeguard::trojan {

double attack_success_rate(std::span<const int> predictions, std::span<const int> true_labels,
                           int target) {
  if (predictions.size() != true_labels.size()) {
    throw MetricError("attack_success_rate: " + std::to_string(predictions.size()) +
                      " predictions for " + std::to_string(true_labels.size()) + " labels");
  }
  std::size_t eligible = 0, hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (true_labels[i] == target) continue;
    ++eligible;
    if (predictions[i] == target) ++hits;
  }
  if (eligible == 0) throw MetricError("attack_success_rate: no samples outside the target class");
  return static_cast<double>(hits) / static_cast<double>(eligible);
}

double attack_success_rate(const nn::Model& model, const LabeledImageSet& triggered, int target) {
  return attack_success_rate(model.predict(triggered.images), triggered.labels, target);
}

double test_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw MetricError("test_accuracy: " + std::to_string(predictions.size()) +
                      " predictions for " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw MetricError("test_accuracy: empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double test_accuracy(const nn::Model& model, const LabeledImageSet& clean) {
  return test_accuracy(model.predict(clean.images), clean.labels);
}

nn::Model victim_model(const Shape& sample_shape, std::size_t classes, std::uint64_t seed,
                       std::size_t hidden) {
  if (sample_shape.size() != 3) throw DimensionError("victim_model: expected [c x h x w]");
  Rng rng(seed, 0x71C7);
  const std::size_t c = sample_shape[0];
  const std::size_t h = (sample_shape[1] - 2) / 2, w = (sample_shape[2] - 2) / 2;
  nn::Model model(sample_shape, classes);
  model.add(nn::Conv2dLayer::init(c, 8, 3, 1, 0, rng));
  model.add(nn::ParametricActivation::base(nn::ActivationKind::PReLU));
  model.add(nn::MaxPool2d{2});
  model.add(nn::Flatten{});
  model.add(nn::DenseLayer::init(8 * h * w, hidden, rng));
  model.add(nn::ParametricActivation::base(nn::ActivationKind::PReLU));
  model.add(nn::DenseLayer::init(hidden, classes, rng));
  model.validate();
  return model;
}

}  // namespace mergeguard::trojan
