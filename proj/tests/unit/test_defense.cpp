#include <gtest/gtest.h>

#include "mergeguard/defense/accounting.hpp"
#include "mergeguard/defense/experiment.hpp"
#include "mergeguard/merge/blocks.hpp"
#include "mergeguard/merge/compression.hpp"
#include "mergeguard/trojan/metrics.hpp"

namespace mergeguard::defense {
namespace {

using trojan::LabeledImageSet;

nn::Model toy_mlp(std::uint64_t seed) {
  Rng rng(seed, 11);
  nn::Model m({1, 16, 16}, 4);
  m.add(nn::Flatten{});
  m.add(nn::DenseLayer::init(256, 16, rng));
  m.add(nn::ParametricActivation::pinned(nn::ActivationKind::PReLU, 0.0f));
  m.add(nn::DenseLayer::init(16, 4, rng));
  return m;
}

const LabeledImageSet& benign() {
  static const LabeledImageSet set = trojan::synth_shapes(256, 4, 16, 16, 40);
  return set;
}

DefenseConfig quick(Method method, double lambda, std::size_t epochs) {
  DefenseConfig c;
  c.method = method;
  c.lambda = lambda;
  c.epochs = epochs;
  c.batch_size = 64;
  c.learning_rates = {0.05};
  return c;
}

TEST(MergeGuard, ZeroLambdaLeavesAlphaNearInitAndMergesNothing) {
  const auto out = mergeguard_defend(toy_mlp(1), benign(), quick(Method::MergeGuard, 0.0, 5));
  ASSERT_EQ(out.run.blocks.size(), 1u);
  EXPECT_FALSE(out.run.blocks[0].merged);
  EXPECT_LT(out.run.blocks[0].alpha, 0.2);
  EXPECT_EQ(out.run.merge_safety_delta, 0.0);
  EXPECT_EQ(count_params(out.model), count_params(toy_mlp(1)));
}

TEST(MergeGuard, HugeLambdaDrivesAlphaToOneAndMerges) {
  const auto out = mergeguard_defend(toy_mlp(2), benign(), quick(Method::MergeGuard, 1e4, 20));
  ASSERT_EQ(out.run.blocks.size(), 1u);
  EXPECT_GE(out.run.blocks[0].alpha, 0.99);
  EXPECT_TRUE(out.run.blocks[0].merged);
  EXPECT_TRUE(merge::find_mergeable_blocks(out.model).empty());
  EXPECT_LE(out.run.merge_safety_delta, 1e-4);
}

TEST(MergeGuard, AccountingIsConsistentAfterMerge) {
  const nn::Model victim = toy_mlp(3);
  const auto out = mergeguard_defend(victim, benign(), quick(Method::MergeGuard, 1e4, 20));
  std::size_t saved = 0;
  for (const auto& b : out.run.blocks) {
    if (!b.merged) continue;
    saved += b.params_block - b.params_fused;
    EXPECT_EQ(b.compression_ratio, b.weight_reduction);
    EXPECT_EQ(b.compression_ratio, merge::compression_ratio_dense({256, 16, 4}));
  }
  EXPECT_EQ(count_params(out.model), count_params(victim) - saved);
}

TEST(MergeGuard, TooFewBlocksIsADefenseError) {
  auto cfg = quick(Method::MergeGuard, 1.0, 1);
  cfg.k_last_blocks = 2;
  EXPECT_THROW(mergeguard_defend(toy_mlp(4), benign(), cfg), DefenseError);
}

TEST(MergeGuard, SameSeedIsDeterministic) {
  const auto a = mergeguard_defend(toy_mlp(5), benign(), quick(Method::MergeGuard, 1.0, 3));
  const auto b = mergeguard_defend(toy_mlp(5), benign(), quick(Method::MergeGuard, 1.0, 3));
  EXPECT_EQ(a.model.logits(benign().images), b.model.logits(benign().images));
  EXPECT_EQ(a.run.final_loss, b.run.final_loss);
  EXPECT_EQ(a.run.blocks[0].alpha, b.run.blocks[0].alpha);
}

TEST(FineTune, ZeroEpochsIsANoOp) {
  const nn::Model victim = toy_mlp(6);
  const auto out = ft_defend(victim, benign(), quick(Method::FineTune, 1.0, 0));
  EXPECT_EQ(out.model.logits(benign().images), victim.logits(benign().images));
  EXPECT_TRUE(out.run.blocks.empty());
}

TEST(FineTune, SameSeedIsDeterministic) {
  const auto a = ft_defend(toy_mlp(7), benign(), quick(Method::FineTune, 1.0, 2));
  const auto b = ft_defend(toy_mlp(7), benign(), quick(Method::FineTune, 1.0, 2));
  EXPECT_EQ(a.model.logits(benign().images), b.model.logits(benign().images));
}

TEST(DefenseConfig, InvalidFieldsAreConfigErrors) {
  DefenseConfig c;
  c.benign_fraction = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DefenseConfig{};
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DefenseConfig{};
  c.k_last_blocks = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(method_from_string("fp"), ConfigError);
}

SweepTrial trial(double lr, double acc, std::optional<double> asr, std::size_t merged) {
  SweepTrial t;
  t.learning_rate = lr;
  t.val_acc = acc;
  t.val_asr = asr;
  t.merged_blocks = merged;
  return t;
}

TEST(SelectTrial, PrefersMergedThenLowAsrWithinAccuracyBudget) {
  const std::vector<SweepTrial> trials{trial(0.1, 0.95, 0.5, 0), trial(0.3, 0.93, 0.2, 1),
                                       trial(0.5, 0.94, 0.1, 1), trial(0.7, 0.80, 0.0, 1)};
  EXPECT_EQ(select_trial(trials, 0.96, 0.05), 2u);
}

TEST(SelectTrial, FallsBackToSmallestDrop) {
  const std::vector<SweepTrial> trials{trial(0.1, 0.70, 0.5, 0), trial(0.3, 0.80, 0.2, 1)};
  EXPECT_EQ(select_trial(trials, 0.96, 0.05), 1u);
  EXPECT_THROW(select_trial({}, 0.9, 0.05), DefenseError);
}

ArchDescriptor mlp_block(std::size_t in, std::size_t hidden, std::size_t out) {
  ArchDescriptor a;
  a.name = "block";
  ArchLayer d1{.kind = ArchLayer::Kind::Dense, .name = "fc1", .in = in, .out = hidden};
  ArchLayer act{.kind = ArchLayer::Kind::Activation, .name = "act"};
  ArchLayer d2{.kind = ArchLayer::Kind::Dense, .name = "fc2", .in = hidden, .out = out};
  a.layers = {d1, act, d2};
  return a;
}

TEST(Accounting, VitMlpBlockArithmetic) {
  const auto r = account(mlp_block(768, 3072, 768), 1);
  EXPECT_EQ(r.params_before, 4722432u);
  EXPECT_EQ(r.params_after, 590592u);
  ASSERT_EQ(r.blocks.size(), 1u);
  EXPECT_EQ(r.blocks[0].params_block - r.blocks[0].params_fused, 4131840u);
  EXPECT_EQ(r.blocks[0].compression_ratio, 0.875);
}

TEST(Accounting, SmallDenseLayer) {
  const ArchLayer d{.kind = ArchLayer::Kind::Dense, .name = "fc", .in = 10, .out = 10};
  EXPECT_EQ(layer_params(d), 110u);
  EXPECT_EQ(layer_macs(d), 100u);
}

TEST(Accounting, ConvLayerMacs) {
  const ArchLayer c{.kind = ArchLayer::Kind::Conv, .name = "conv", .k = 3, .c_in = 2, .c_out = 4, .h_out = 5, .w_out = 6};
  EXPECT_EQ(layer_params(c), 3u * 3 * 2 * 4 + 4);
  EXPECT_EQ(layer_macs(c), 3u * 3 * 2 * 4 * 5 * 6);
}

TEST(Accounting, UnknownKindIsAnAccountingError) {
  EXPECT_THROW(parse_arch(R"({"name":"x","layers":[{"kind":"lstm"}]})"), AccountingError);
  EXPECT_THROW(parse_arch(R"({"name":"x","layers":[{"kind":"dense","in":3}]})"), AccountingError);
  EXPECT_THROW(bundled_arch("resnet-50"), AccountingError);
}

TEST(Accounting, RepeatGroupsExpand) {
  const auto a = parse_arch(
      R"({"name":"x","layers":[{"repeat":3,"layers":[{"kind":"dense","in":4,"out":4},{"kind":"activation"}]},{"kind":"dense","in":4,"out":2}]})");
  EXPECT_EQ(a.layers.size(), 7u);
  EXPECT_EQ(count_params(a), 3u * 20 + 10);
}

TEST(Accounting, VitBaseSixteen) {
  const auto vit = vit_base_16();
  EXPECT_EQ(count_params(vit), 85806346u);
  const auto three = account(vit, 3);
  EXPECT_EQ(three.params_after, 73410826u);
  EXPECT_NEAR(three.mac_reduction, 0.14, 0.02);
  EXPECT_EQ(account(vit, 4).params_after, 69278986u);
  EXPECT_THROW(account(vit, 13), AccountingError);
}

TEST(Accounting, ExecutableModelMatchesDescriptor) {
  const nn::Model m = trojan::victim_model({1, 16, 16}, 4, 0);
  EXPECT_EQ(count_params(m), count_params(describe(m)));
  EXPECT_EQ(count_macs(m), count_macs(describe(m)));
  // conv 1->8 3x3 (80) + dense 8*7*7->64 (25152) + dense 64->4 (260).
  EXPECT_EQ(count_params(m), 80u + 25152u + 260u);
}

ExperimentConfig tiny_experiment(std::uint64_t seed) {
  ExperimentConfig c;
  c.data.train_size = 3000;
  c.data.val_size = 300;
  c.data.test_size = 400;
  c.victim.epochs = 2;
  c.defenses = {quick(Method::MergeGuard, 1.0, 2), quick(Method::FineTune, 1.0, 2)};
  c.clean_safety = false;
  c.apply_seed(seed);
  return c;
}

TEST(Experiment, SameSeedGivesIdenticalReports) {
  const auto a = run_experiment(tiny_experiment(3)).report;
  const auto b = run_experiment(tiny_experiment(3)).report;
  ASSERT_EQ(a.defenses.size(), 2u);
  EXPECT_EQ(a.trojaned.test_acc, b.trojaned.test_acc);
  EXPECT_EQ(a.trojaned.asr, b.trojaned.asr);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.defenses[i].after.test_acc, b.defenses[i].after.test_acc);
    EXPECT_EQ(a.defenses[i].after.asr, b.defenses[i].after.asr);
  }
  EXPECT_EQ(a.poisoned_count, static_cast<std::size_t>(0.1 * a.victim_train_size));
}

TEST(Experiment, FailingStageCarriesPartialReport) {
  auto cfg = tiny_experiment(4);
  cfg.defenses[0].k_last_blocks = 3;
  try {
    run_experiment(cfg);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "defense:mergeguard");
    EXPECT_EQ(e.partial().failed_stage, "defense:mergeguard");
    EXPECT_GT(e.partial().trojaned.test_acc, 0.0);
    EXPECT_TRUE(e.partial().defenses.empty());
  }
}

TEST(Experiment, ZeroRatioPoisonsNothing) {
  auto cfg = tiny_experiment(5);
  cfg.attack.ratio = 0.0;
  cfg.defenses.resize(1);
  const auto r = run_experiment(cfg).report;
  EXPECT_EQ(r.poisoned_count, 0u);
  EXPECT_LT(*r.trojaned.asr, 0.5);
}

}  // namespace
}  // namespace mergeguard::defense
