#include "mergeguard/defense/experiment.hpp"

#include <chrono>

#include "mergeguard/autodiff/rng.hpp"
#include "mergeguard/defense/accounting.hpp"
#include "mergeguard/nn/training.hpp"
#include "mergeguard/trojan/metrics.hpp"

namespace mergeguard::defense {

namespace {

// Independent sub-seeds for each consumer of randomness.
enum Stream : std::uint64_t { kData = 1, kSplit, kVal, kVictimInit, kVictimTrain };

std::uint64_t sub_seed(std::uint64_t seed, Stream s) { return Rng(seed, s).next_u64(); }

}  // namespace

std::vector<DefenseConfig> default_defenses() {
  DefenseConfig ft;
  ft.method = Method::FineTune;
  return {DefenseConfig{}, ft};
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  attack.seed = s;
  for (auto& d : defenses) d.seed = s;
}

void ExperimentConfig::validate() const {
  if (data.source != "synthetic" && data.source != "idx") {
    throw ConfigError("data.source must be 'synthetic' or 'idx', got '" + data.source + "'");
  }
  if (data.source == "idx" && (data.train_images.empty() || data.train_labels.empty() ||
                               data.test_images.empty() || data.test_labels.empty())) {
    throw ConfigError("data.source 'idx' needs train_images, train_labels, test_images, test_labels");
  }
  if (data.train_size == 0 || data.test_size == 0) throw ConfigError("data sizes must be positive");
  if (victim.epochs == 0 || victim.batch_size == 0 || !(victim.learning_rate > 0.0)) {
    throw ConfigError("victim.epochs, batch_size and learning_rate must be positive");
  }
  if (!(victim.momentum >= 0.0 && victim.momentum < 1.0)) {
    throw ConfigError("victim.momentum must lie in [0, 1)");
  }
  if (victim.hidden == 0) throw ConfigError("victim.hidden must be positive");
  for (const auto& d : defenses) d.validate();
}

ExperimentData prepare_data(const ExperimentConfig& config) {
  const auto& dc = config.data;
  trojan::LabeledImageSet pool, held;
  if (dc.source == "synthetic") {
    pool = trojan::synth_shapes(dc.train_size, dc.classes, dc.height, dc.width,
                                sub_seed(config.seed, kData));
    held = trojan::synth_shapes(dc.val_size + dc.test_size, dc.classes, dc.height, dc.width,
                                sub_seed(config.seed, kVal));
  } else {
    pool = trojan::load_idx(dc.train_images, dc.train_labels, dc.classes);
    held = trojan::load_idx(dc.test_images, dc.test_labels, pool.classes);
  }
  const double benign_fraction =
      config.defenses.empty() ? 0.05 : config.defenses.front().benign_fraction;
  auto [benign, victim] = trojan::split_set(pool, benign_fraction, sub_seed(config.seed, kSplit));
  const double val_share = held.size() == 0 ? 0.0
                                            : static_cast<double>(std::min(dc.val_size, held.size())) /
                                                  static_cast<double>(held.size());
  auto [val, test] = trojan::split_set(held, val_share, sub_seed(config.seed, kSplit) ^ 1);
  return {std::move(victim), std::move(benign), std::move(val), std::move(test)};
}

nn::Model train_victim(const ExperimentConfig& config, const trojan::LabeledImageSet& train) {
  nn::Model model = trojan::victim_model(train.sample_shape(), train.classes,
                                         sub_seed(config.seed, kVictimInit), config.victim.hidden);
  nn::TrainOptions o;
  o.epochs = config.victim.epochs;
  o.batch_size = config.victim.batch_size;
  o.learning_rate = config.victim.learning_rate;
  o.momentum = config.victim.momentum;
  o.seed = sub_seed(config.seed, kVictimTrain);
  nn::train(model, train.images, train.labels, o);
  return model;
}

PhaseMetrics measure(const nn::Model& model, const trojan::LabeledImageSet& test,
                     const std::optional<trojan::LabeledImageSet>& triggered, int target) {
  PhaseMetrics m;
  m.test_acc = trojan::test_accuracy(model, test);
  if (triggered && triggered->size() > 0) {
    m.asr = trojan::attack_success_rate(model, *triggered, target);
  }
  m.params = count_params(model);
  m.macs = count_macs(model);
  return m;
}

namespace {

class Stopwatch {
 public:
  explicit Stopwatch(std::vector<StageTiming>& sink) : sink_(sink) {}
  void lap(std::string stage) {
    const auto now = std::chrono::steady_clock::now();
    sink_.push_back({std::move(stage), std::chrono::duration<double>(now - last_).count()});
    last_ = now;
  }

 private:
  std::vector<StageTiming>& sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentResult result;
  auto& report = result.report;
  report.attack = std::string(trojan::to_string(config.attack.attack));
  report.target = config.attack.target;
  report.poison_ratio = config.attack.ratio;
  report.seed = config.seed;
  Stopwatch clock(result.timings);

  std::string stage = "config";
  try {
    config.validate();
    stage = "data";
    const ExperimentData data = prepare_data(config);
    report.victim_train_size = data.victim_train.size();
    report.benign_size = data.benign.size();
    report.val_size = data.val.size();
    report.test_size = data.test.size();
    clock.lap(stage);

    stage = "poison";
    result.poisoned_train = trojan::poison(data.victim_train, config.attack);
    report.poisoned_count = result.poisoned_train.poisoned_count();
    const auto triggered_test = trojan::triggered_eval_set(data.test, config.attack);
    const auto triggered_val = trojan::triggered_eval_set(data.val, config.attack);
    clock.lap(stage);

    stage = "victim";
    result.victim = train_victim(config, result.poisoned_train);
    report.trojaned = measure(result.victim, data.test, triggered_test, config.attack.target);
    clock.lap(stage);

    const SelectionSets selection{&data.val, &triggered_val, config.attack.target};
    for (const auto& dc : config.defenses) {
      stage = "defense:" + std::string(to_string(dc.method));
      auto outcome = defend(result.victim, data.benign, dc, selection);
      DefenseSummary summary;
      summary.before = report.trojaned;
      summary.after = measure(outcome.model, data.test, triggered_test, config.attack.target);
      summary.run = std::move(outcome.run);
      report.defenses.push_back(std::move(summary));
      result.defended.push_back(std::move(outcome.model));
      clock.lap(stage);
    }

    if (config.clean_safety && !config.defenses.empty()) {
      stage = "clean-safety";
      // Same victim recipe on the unpoisoned split.
      const nn::Model clean = train_victim(config, data.victim_train);
      const SelectionSets clean_selection{&data.val, nullptr, config.attack.target};
      const double before = trojan::test_accuracy(clean, data.test);
      for (const auto& dc : config.defenses) {
        auto outcome = defend(clean, data.benign, dc, clean_selection);
        CleanSafety cs;
        cs.method = dc.method;
        cs.test_acc_before = before;
        cs.test_acc_after = trojan::test_accuracy(outcome.model, data.test);
        for (const auto& b : outcome.run.blocks) cs.merged_blocks += b.merged;
        report.clean_safety.push_back(cs);
      }
      clock.lap(stage);
    }
  } catch (const Error& e) {
    report.failed_stage = stage;
    throw StageError(stage, e.what(), report);
  }
  return result;
}

}  // namespace mergeguard::defense
