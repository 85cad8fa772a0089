#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mergeguard/merge/fuse.hpp"
#include "mergeguard/nn/model.hpp"
#include "mergeguard/trojan/dataset.hpp"

namespace mergeguard::defense {

enum class Method { MergeGuard, FineTune };

std::string_view to_string(Method method);
Method method_from_string(std::string_view name);

struct DefenseConfig {
  Method method = Method::MergeGuard;
  double benign_fraction = 0.05;
  double lambda = 1.0;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double momentum = 0.9;
  // One entry trains once; several entries are swept and one is selected
  // on the validation split (see select_trial).
  std::vector<double> learning_rates{0.3, 0.5, 0.7};
  std::size_t k_last_blocks = 1;
  double alpha_threshold = 0.99;
  double alpha_init = 0.01;
  // Step-size multiplier for raw_alpha relative to the weights.
  double alpha_lr_multiplier = 30.0;
  // Global gradient-norm clip applied by both methods; 0 disables it.
  double grad_clip = 1.0;
  // Largest tolerated drop in validation accuracy when selecting a rate.
  double max_acc_drop = 0.05;
  // Optional plain fine-tune after merging; 0 disables it.
  std::size_t restorative_epochs = 0;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Held-out data used to pick a learning rate from a sweep. The triggered
/// split is optional; without it selection uses accuracy and merging only.
struct SelectionSets {
  const trojan::LabeledImageSet* clean = nullptr;
  const trojan::LabeledImageSet* triggered = nullptr;
  int target = 0;
};

struct BlockOutcome {
  std::size_t position = 0;
  merge::BlockFamily family = merge::BlockFamily::Dense;
  double alpha = 0.0;  // after fine-tuning, before snapping
  bool merged = false;
  double compression_ratio = 0.0;
  double weight_reduction = 0.0;
  std::size_t weights_block = 0;
  std::size_t weights_fused = 0;
  std::size_t params_block = 0;
  std::size_t params_fused = 0;
};

struct SweepTrial {
  double learning_rate = 0.0;
  double val_acc = 0.0;
  std::optional<double> val_asr;
  std::size_t merged_blocks = 0;
  bool diverged = false;
  bool selected = false;
};

struct DefenseRun {
  Method method = Method::MergeGuard;
  double learning_rate = 0.0;
  std::vector<SweepTrial> sweep;
  std::vector<BlockOutcome> blocks;
  // Max |logit change| on the benign set across the fuse step, with alpha
  // already snapped to 1; 0 when nothing merged.
  double merge_safety_delta = 0.0;
  std::size_t steps = 0;
  double final_loss = 0.0;
  double final_cross_entropy = 0.0;
  double final_regularizer = 0.0;
};

struct DefenseOutcome {
  nn::Model model;
  DefenseRun run;
};

/// Wraps the last k mergeable blocks in trainable activations at
/// alpha_init, fine-tunes on `benign` with CE + lambda sum (1 - alpha)^2,
/// then snaps alpha >= threshold to 1 and fuses those blocks.
/// Throws DefenseError if the model has fewer than k mergeable blocks.
DefenseOutcome mergeguard_defend(const nn::Model& model, const trojan::LabeledImageSet& benign,
                                 const DefenseConfig& config, const SelectionSets& selection = {});

/// The same loop without alpha parameters or merging.
DefenseOutcome ft_defend(const nn::Model& model, const trojan::LabeledImageSet& benign,
                         const DefenseConfig& config, const SelectionSets& selection = {});

DefenseOutcome defend(const nn::Model& model, const trojan::LabeledImageSet& benign,
                      const DefenseConfig& config, const SelectionSets& selection = {});

/// Index of the trial to keep. Trials whose validation accuracy falls more
/// than max_acc_drop below `baseline_acc` are inadmissible. Among admissible
/// trials: most merged blocks, then lowest validation ASR when known, then
/// highest accuracy, then smallest rate. With no admissible trial, the
/// smallest accuracy drop wins.
std::size_t select_trial(const std::vector<SweepTrial>& trials, double baseline_acc,
                         double max_acc_drop);

}  // namespace mergeguard::defense
