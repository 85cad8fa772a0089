#include "mergeguard/nn/training.hpp"

#include <cmath>

#include "mergeguard/autodiff/rng.hpp"

namespace mergeguard::nn {

namespace {

void clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (const float v : g.data()) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;  // also leaves non-finite norms to sgd_step
  const auto scale = static_cast<float>(max_norm / norm);
  for (auto& g : grads)
    for (float& v : g.data()) v *= scale;
}

}  // namespace

TrainHistory train(Model& model, const Tensor& images, std::span<const int> labels,
                   const TrainOptions& options) {
  const std::size_t n = images.rank() == 0 ? 0 : images.dim(0);
  if (labels.size() != n) {
    throw DataError("train: " + std::to_string(n) + " images but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (options.batch_size == 0) throw ContractError("train: batch size must be positive");
  TrainHistory history;
  if (options.epochs == 0 || n == 0) return history;

  ad::SgdState state(options.learning_rate, options.momentum);
  Rng rng(options.seed, 0x7EA1);
  std::vector<int> batch_labels;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = rng.permutation(n);
    for (std::size_t begin = 0; begin < n; begin += options.batch_size) {
      const std::size_t end = std::min(n, begin + options.batch_size);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      batch_labels.resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) batch_labels[i] = labels[rows[i]];

      ad::Tape<float> tape;
      const auto vars = Model::bind(tape, model.parameter_values<float>(), true);
      const ad::Var x = tape.constant(gather_rows(images, rows));
      const auto loss =
          composite_loss(tape, model, vars, x, batch_labels, options.lambda, options.ce_weight);
      const float total = tape.value(loss.total).item();
      if (!std::isfinite(total)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      history.steps.push_back({epoch, tape.value(loss.cross_entropy).item(),
                               tape.value(loss.regularizer).item(), total});
      tape.backward(loss.total);

      auto refs = model.parameters(options.alpha_lr_scale);
      std::vector<Tensor> grads;
      grads.reserve(vars.size());
      for (const ad::Var v : vars) grads.push_back(tape.grad(v));
      if (options.grad_clip > 0.0) clip_global_norm(grads, options.grad_clip);
      ad::sgd_step(refs, grads, state);
    }
  }
  return history;
}

}  // namespace mergeguard::nn
