#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mergeguard/defense/defend.hpp"
#include "mergeguard/trojan/attacks.hpp"

namespace mergeguard::defense {

struct DataConfig {
  // "synthetic" or "idx".
  std::string source = "synthetic";
  std::size_t train_size = 40000;  // pool split into victim and benign data
  std::size_t val_size = 1000;
  std::size_t test_size = 2000;
  std::size_t classes = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  // IDX sources; validation and test are carved from the test files.
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
};

struct VictimConfig {
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t hidden = 64;
};

/// MergeGuard followed by the fine-tuning baseline, both at defaults.
std::vector<DefenseConfig> default_defenses();

struct ExperimentConfig {
  DataConfig data;
  trojan::PoisonSpec attack;
  VictimConfig victim;
  std::vector<DefenseConfig> defenses = default_defenses();
  bool clean_safety = true;
  std::uint64_t seed = 0;

  /// Propagates `seed` into the attack and defense sections.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

struct PhaseMetrics {
  double test_acc = 0.0;
  std::optional<double> asr;
  std::size_t params = 0;
  std::size_t macs = 0;
};

struct DefenseSummary {
  DefenseRun run;
  PhaseMetrics before;
  PhaseMetrics after;
};

struct CleanSafety {
  Method method = Method::MergeGuard;
  double test_acc_before = 0.0;
  double test_acc_after = 0.0;
  std::size_t merged_blocks = 0;
};

struct ExperimentReport {
  std::string attack;
  int target = 0;
  double poison_ratio = 0.0;
  std::uint64_t seed = 0;
  std::size_t victim_train_size = 0;
  std::size_t benign_size = 0;
  std::size_t val_size = 0;
  std::size_t test_size = 0;
  std::size_t poisoned_count = 0;
  PhaseMetrics trojaned;
  std::vector<DefenseSummary> defenses;
  std::vector<CleanSafety> clean_safety;
  nlohmann::json config;  // echo, filled by the caller
  std::string failed_stage;  // empty when every stage completed
};

/// Wall-clock seconds per stage; kept out of the report so that reports are
/// reproducible byte for byte.
struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct ExperimentResult {
  ExperimentReport report;
  nn::Model victim;
  std::vector<nn::Model> defended;
  trojan::LabeledImageSet poisoned_train;
  std::vector<StageTiming> timings;
};

/// Raised when a stage fails; carries the report filled up to that stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, ExperimentReport partial)
      : Error("stage '" + stage + "' failed: " + what),
        stage_(std::move(stage)),
        partial_(std::move(partial)) {}

  const std::string& stage() const noexcept { return stage_; }
  const ExperimentReport& partial() const noexcept { return partial_; }

 private:
  std::string stage_;
  ExperimentReport partial_;
};

/// Bundles the data splits the pipeline works on.
struct ExperimentData {
  trojan::LabeledImageSet victim_train;  // before poisoning
  trojan::LabeledImageSet benign;
  trojan::LabeledImageSet val;
  trojan::LabeledImageSet test;
};

ExperimentData prepare_data(const ExperimentConfig& config);

/// The victim recipe of `config` trained on `train`.
nn::Model train_victim(const ExperimentConfig& config, const trojan::LabeledImageSet& train);

PhaseMetrics measure(const nn::Model& model, const trojan::LabeledImageSet& test,
                     const std::optional<trojan::LabeledImageSet>& triggered, int target);

/// data -> poison -> train victim -> trojaned metrics -> each defense ->
/// defended metrics, plus the clean-model safety run when enabled.
ExperimentResult run_experiment(const ExperimentConfig& config);

}  // namespace mergeguard::defense
