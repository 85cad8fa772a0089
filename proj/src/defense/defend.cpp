#include "mergeguard/defense/defend.hpp"

#include <algorithm>
#include <cmath>

#include "mergeguard/merge/blocks.hpp"
#include "mergeguard/nn/training.hpp"
#include "mergeguard/trojan/metrics.hpp"

namespace mergeguard::defense {

std::string_view to_string(Method method) {
  return method == Method::MergeGuard ? "mergeguard" : "ft";
}

Method method_from_string(std::string_view name) {
  if (name == "mergeguard") return Method::MergeGuard;
  if (name == "ft") return Method::FineTune;
  throw ConfigError("unknown defense method '" + std::string(name) + "' (expected mergeguard or ft)");
}

void DefenseConfig::validate() const {
  if (!(benign_fraction > 0.0 && benign_fraction <= 1.0)) {
    throw ConfigError("defense.benign_fraction must lie in (0, 1]");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("defense.lambda must be >= 0");
  if (batch_size == 0) throw ConfigError("defense.batch_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("defense.momentum must lie in [0, 1)");
  if (learning_rates.empty()) throw ConfigError("defense.learning_rate needs at least one value");
  for (const double lr : learning_rates) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("defense.learning_rate must be positive");
  }
  if (k_last_blocks == 0) throw ConfigError("defense.k_last_blocks must be at least 1");
  if (!(alpha_threshold > 0.0 && alpha_threshold <= 1.0)) {
    throw ConfigError("defense.alpha_threshold must lie in (0, 1]");
  }
  if (!(alpha_init > 0.0 && alpha_init < 1.0)) throw ConfigError("defense.alpha_init must lie in (0, 1)");
  if (!(alpha_lr_multiplier > 0.0)) throw ConfigError("defense.alpha_lr_multiplier must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("defense.grad_clip must be >= 0");
  if (!(max_acc_drop >= 0.0 && max_acc_drop <= 1.0)) {
    throw ConfigError("defense.max_acc_drop must lie in [0, 1]");
  }
}

std::size_t select_trial(const std::vector<SweepTrial>& trials, double baseline_acc,
                         double max_acc_drop) {
  if (trials.empty()) throw DefenseError("select_trial: no trials");
  auto admissible = [&](const SweepTrial& t) {
    return !t.diverged && baseline_acc - t.val_acc <= max_acc_drop + 1e-12;
  };
  auto better = [](const SweepTrial& a, const SweepTrial& b) {
    if (a.merged_blocks != b.merged_blocks) return a.merged_blocks > b.merged_blocks;
    const double asr_a = a.val_asr.value_or(0.0), asr_b = b.val_asr.value_or(0.0);
    if (asr_a != asr_b) return asr_a < asr_b;
    if (a.val_acc != b.val_acc) return a.val_acc > b.val_acc;
    return a.learning_rate < b.learning_rate;
  };
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (admissible(trials[i]) && (!best || better(trials[i], trials[*best]))) best = i;
  }
  if (best) return *best;
  std::size_t fallback = 0;
  for (std::size_t i = 1; i < trials.size(); ++i) {
    const auto& t = trials[i];
    const auto& f = trials[fallback];
    if (f.diverged || (!t.diverged && t.val_acc > f.val_acc)) fallback = i;
  }
  return fallback;
}

namespace {

struct Attempt {
  nn::Model model;
  DefenseRun run;
};

nn::TrainOptions train_options(const DefenseConfig& config, double lr, double lambda) {
  nn::TrainOptions o;
  o.epochs = config.epochs;
  o.batch_size = config.batch_size;
  o.learning_rate = lr;
  o.momentum = config.momentum;
  o.lambda = lambda;
  o.alpha_lr_scale = config.alpha_lr_multiplier;
  o.grad_clip = config.grad_clip;
  o.seed = config.seed;
  return o;
}

void record_history(DefenseRun& run, const nn::TrainHistory& history) {
  run.steps = history.steps.size();
  if (!history.steps.empty()) {
    run.final_loss = history.steps.back().loss;
    run.final_cross_entropy = history.steps.back().cross_entropy;
    run.final_regularizer = history.steps.back().regularizer;
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

void restorative(nn::Model& model, const trojan::LabeledImageSet& benign,
                 const DefenseConfig& config, double lr) {
  if (config.restorative_epochs == 0) return;
  auto o = train_options(config, lr, 0.0);
  o.epochs = config.restorative_epochs;
  o.seed = config.seed ^ 0x5E570AEULL;
  nn::train(model, benign.images, benign.labels, o);
}

Attempt mergeguard_once(const nn::Model& source, const trojan::LabeledImageSet& benign,
                        const DefenseConfig& config, double lr) {
  Attempt a{source, {}};
  a.run.method = Method::MergeGuard;
  a.run.learning_rate = lr;
  const auto available = merge::find_mergeable_blocks(a.model);
  if (available.size() < config.k_last_blocks) {
    throw DefenseError("mergeguard: model has " + std::to_string(available.size()) +
                       " mergeable blocks, " + std::to_string(config.k_last_blocks) + " requested");
  }
  const auto blocks = merge::last_blocks(a.model, config.k_last_blocks);
  for (const auto& b : blocks) {
    auto& act = std::get<nn::ParametricActivation>(a.model.layer(b.position + 1));
    act = nn::ParametricActivation::wrapped(act.kind, config.alpha_init, act.beta);
  }
  record_history(a.run, nn::train(a.model, benign.images, benign.labels,
                                   train_options(config, lr, config.lambda)));

  for (const auto& b : blocks) {
    BlockOutcome out;
    out.position = b.position;
    out.family = b.family;
    out.alpha = std::get<nn::ParametricActivation>(a.model.layer(b.position + 1)).alpha();
    a.run.blocks.push_back(out);
  }
  const auto snapped = merge::snap_alphas(a.model, blocks, config.alpha_threshold);
  // Unmerged blocks keep their trained alpha, frozen.
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (snapped[i]) continue;
    auto& act = std::get<nn::ParametricActivation>(a.model.layer(blocks[i].position + 1));
    act = nn::ParametricActivation::pinned(act.kind, act.alpha(), act.beta);
  }
  const Tensor before = a.model.logits(benign.images);
  for (std::size_t i = blocks.size(); i-- > 0;) {
    if (!snapped[i]) continue;
    const auto rec = merge::fuse_block(a.model, blocks[i]);
    auto& out = a.run.blocks[i];
    out.merged = true;
    out.compression_ratio = rec.compression_ratio;
    out.weight_reduction = rec.weight_reduction;
    out.weights_block = rec.weights_block;
    out.weights_fused = rec.weights_fused;
    out.params_block = rec.params_block;
    out.params_fused = rec.params_fused;
  }
  if (std::any_of(snapped.begin(), snapped.end(), [](bool s) { return s; })) {
    a.run.merge_safety_delta = max_abs_diff(before, a.model.logits(benign.images));
  }
  restorative(a.model, benign, config, lr);
  return a;
}

Attempt ft_once(const nn::Model& source, const trojan::LabeledImageSet& benign,
                const DefenseConfig& config, double lr) {
  Attempt a{source, {}};
  a.run.method = Method::FineTune;
  a.run.learning_rate = lr;
  record_history(a.run, nn::train(a.model, benign.images, benign.labels,
                                  train_options(config, lr, 0.0)));
  return a;
}

template <typename Once>
DefenseOutcome sweep(const nn::Model& model, const trojan::LabeledImageSet& benign,
                     const DefenseConfig& config, const SelectionSets& selection, Once once) {
  config.validate();
  if (benign.size() == 0) throw DefenseError("defense: empty benign set");
  if (config.learning_rates.size() == 1) {
    auto a = once(model, benign, config, config.learning_rates.front());
    return {std::move(a.model), std::move(a.run)};
  }
  if (selection.clean == nullptr) {
    throw DefenseError("defense: a learning-rate sweep needs a validation split");
  }
  const double baseline = trojan::test_accuracy(model, *selection.clean);
  std::vector<SweepTrial> trials;
  std::vector<std::optional<Attempt>> attempts;
  for (const double lr : config.learning_rates) {
    SweepTrial t;
    t.learning_rate = lr;
    try {
      auto a = once(model, benign, config, lr);
      t.val_acc = trojan::test_accuracy(a.model, *selection.clean);
      if (selection.triggered != nullptr) {
        t.val_asr = trojan::attack_success_rate(a.model, *selection.triggered, selection.target);
      }
      t.merged_blocks = static_cast<std::size_t>(std::count_if(
          a.run.blocks.begin(), a.run.blocks.end(), [](const BlockOutcome& b) { return b.merged; }));
      attempts.emplace_back(std::move(a));
    } catch (const TrainingError&) {
      t.diverged = true;
      attempts.emplace_back();
    }
    trials.push_back(t);
  }
  const std::size_t pick = select_trial(trials, baseline, config.max_acc_drop);
  if (!attempts[pick]) {
    throw DefenseError("defense: every learning rate in the sweep diverged");
  }
  trials[pick].selected = true;
  Attempt chosen = std::move(*attempts[pick]);
  chosen.run.sweep = std::move(trials);
  return {std::move(chosen.model), std::move(chosen.run)};
}

}  // namespace

DefenseOutcome mergeguard_defend(const nn::Model& model, const trojan::LabeledImageSet& benign,
                                 const DefenseConfig& config, const SelectionSets& selection) {
  return sweep(model, benign, config, selection, mergeguard_once);
}

DefenseOutcome ft_defend(const nn::Model& model, const trojan::LabeledImageSet& benign,
                         const DefenseConfig& config, const SelectionSets& selection) {
  return sweep(model, benign, config, selection, ft_once);
}

DefenseOutcome defend(const nn::Model& model, const trojan::LabeledImageSet& benign,
                      const DefenseConfig& config, const SelectionSets& selection) {
  return config.method == Method::MergeGuard ? mergeguard_defend(model, benign, config, selection)
                                             : ft_defend(model, benign, config, selection);
}

}  // namespace mergeguard::defense
