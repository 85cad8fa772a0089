#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "mergeguard/io/checkpoint.hpp"
#include "mergeguard/io/cli.hpp"
#include "mergeguard/io/config.hpp"
#include "mergeguard/io/report.hpp"
#include "mergeguard/merge/fuse.hpp"
#include "mergeguard/trojan/metrics.hpp"
#include "support/fixtures.hpp"

namespace mergeguard::io {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("mg_io_" + std::to_string(::getpid()))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

nn::Model trained_alpha_model() {
  nn::Model m = trojan::victim_model({1, 16, 16}, 4, 5);
  // A trainable activation so raw_alpha is part of the checkpoint.
  m.layer(5) = nn::ParametricActivation::wrapped(nn::ActivationKind::SiLU, 0.3, 1.5f);
  return m;
}

TEST(Checkpoint, RoundTripGivesBitIdenticalLogits) {
  Rng rng(1);
  const nn::Model model = trained_alpha_model();
  const Tensor inputs = testing::random_tensor({100, 1, 16, 16}, rng);
  CheckpointMeta meta{.seed = 42, .note = "victim"};
  CheckpointMeta back;
  const nn::Model loaded = decode_model(encode_model(model, meta), &back);
  EXPECT_EQ(loaded.logits(inputs), model.logits(inputs));
  EXPECT_EQ(loaded.parameter_names(), model.parameter_names());
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.note, "victim");
}

TEST(Checkpoint, EncodingIsDeterministic) {
  EXPECT_EQ(encode_model(trained_alpha_model()), encode_model(trained_alpha_model()));
}

TEST(Checkpoint, MergedConvKernelSurvives) {
  Rng rng(2);
  const auto block = testing::random_conv_block(1, 3, 2, 3, 3, 1, rng, 1.0f);
  nn::Model m({1, 8, 8}, 2);
  m.add(merge::merge_conv(block));
  m.add(nn::Flatten{});
  m.add(nn::DenseLayer::init(2 * 6 * 6, 2, rng));
  const nn::Model loaded = decode_model(encode_model(m));
  const auto& conv = std::get<nn::Conv2dLayer>(loaded.layer(0));
  EXPECT_EQ(conv.kernel_size(), 5u);
  EXPECT_EQ(conv.padding, 1u);
  const Tensor x = testing::random_tensor({4, 1, 8, 8}, rng);
  EXPECT_EQ(loaded.logits(x), m.logits(x));
}

TEST(Checkpoint, TruncatedBytesAreCorruption) {
  const std::string bytes = encode_model(trained_alpha_model());
  EXPECT_THROW(decode_model(bytes.substr(0, bytes.size() - 1)), CorruptionError);
  EXPECT_THROW(decode_model(bytes.substr(0, 10)), CorruptionError);
  EXPECT_THROW(decode_model(bytes + "x"), CorruptionError);
}

TEST(Checkpoint, FlippedPayloadBitFailsChecksum) {
  std::string bytes = encode_model(trained_alpha_model());
  bytes[bytes.size() - 7] ^= 0x10;
  try {
    decode_model(bytes);
    FAIL() << "expected CorruptionError";
  } catch (const CorruptionError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, FutureVersionIsAVersionError) {
  std::string bytes = encode_model(trained_alpha_model());
  bytes[4] = static_cast<char>(kCheckpointVersion + 1);
  EXPECT_THROW(decode_model(bytes), VersionError);
}

TEST(Checkpoint, BadMagicAndWrongKindAreCorruption) {
  std::string bytes = encode_model(trained_alpha_model());
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_model(bad), CorruptionError);
  EXPECT_THROW(decode_dataset(bytes), CorruptionError);
}

TEST(Checkpoint, MissingFileNamesThePath) {
  try {
    load_checkpoint("/nonexistent/victim.ckpt");
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/victim.ckpt"), std::string::npos);
  }
}

TEST(Checkpoint, DatasetRoundTrip) {
  TempDir dir;
  auto set = trojan::synth_shapes(50, 4, 16, 16, 3);
  set.poisoned[7] = 1;
  save_dataset(set, dir / "sub" / "set.ckpt");
  EXPECT_EQ(load_dataset(dir / "sub" / "set.ckpt"), set);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    parse_run_config(R"({"defense": {"lamda": 1}})");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("defense.lamda"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_run_config(R"({"attack": {"ratio": "high"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"victim": {"arch": "resnet"}})"), ConfigError);
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
}

TEST(Config, ExpandedFormRoundTrips) {
  const RunConfig cfg = parse_run_config(R"({
    "seed": 9,
    "output_dir": "runs/a",
    "attack": {"kind": "blended", "ratio": 0.05, "blend": 0.3},
    "defense": [{"method": "mergeguard", "learning_rate": [0.1, 0.2], "lambda": 2},
                {"method": "ft", "learning_rate": 0.01}]
  })");
  EXPECT_EQ(cfg.experiment.seed, 9u);
  EXPECT_EQ(cfg.experiment.attack.attack, trojan::AttackKind::Blended);
  ASSERT_EQ(cfg.experiment.defenses.size(), 2u);
  EXPECT_EQ(cfg.experiment.defenses[0].learning_rates, (std::vector<double>{0.1, 0.2}));
  EXPECT_EQ(cfg.experiment.defenses[1].method, defense::Method::FineTune);
  const auto once = to_json(cfg);
  EXPECT_EQ(to_json(parse_run_config(once.dump())), once);
}

defense::ExperimentReport sample_report() {
  defense::ExperimentReport r;
  r.attack = "badnet";
  r.poison_ratio = 0.1;
  r.seed = 3;
  r.trojaned = {.test_acc = 0.97, .asr = 0.99, .params = 25492, .macs = 100000};
  defense::DefenseSummary mg;
  mg.run.method = defense::Method::MergeGuard;
  defense::BlockOutcome b;
  b.merged = true;
  b.weights_block = 25344;
  b.weights_fused = 1568;
  b.compression_ratio = 1.0 - 1568.0 / 25344.0;
  mg.run.blocks.push_back(b);
  mg.before = r.trojaned;
  mg.after = {.test_acc = 0.93, .asr = 0.05, .params = 1652, .macs = 20000};
  defense::DefenseSummary ft;
  ft.run.method = defense::Method::FineTune;
  ft.before = r.trojaned;
  ft.after = {.test_acc = 0.95, .asr = std::nullopt, .params = 25492, .macs = 100000};
  r.defenses = {mg, ft};
  return r;
}

TEST(Report, JsonEmissionIsByteStableAndParses) {
  const std::string a = render(sample_report(), ReportFormat::Json);
  EXPECT_EQ(a, render(sample_report(), ReportFormat::Json));
  EXPECT_EQ(a.back(), '\n');
  const auto j = nlohmann::json::parse(a);
  EXPECT_EQ(render_json(j), a);
  EXPECT_EQ(j["defenses"][1]["after"]["asr"], nullptr);
}

TEST(Report, CsvHasOneRowPerDefense) {
  const std::string csv = render(sample_report(), ReportFormat::Csv);
  std::istringstream in(csv);
  std::string header, mg, ft, extra;
  std::getline(in, header);
  std::getline(in, mg);
  std::getline(in, ft);
  EXPECT_EQ(header, kCsvHeader);
  EXPECT_EQ(mg.rfind("badnet,mergeguard,0.970000,0.990000,0.930000,0.050000,25492,1652,", 0), 0u) << mg;
  EXPECT_EQ(ft, "badnet,ft,0.970000,0.990000,0.950000,,25492,25492,");
  EXPECT_FALSE(std::getline(in, extra));
  EXPECT_THROW(report_format_from_string("xml"), ConfigError);
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "mergeguard");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return code;
}

TEST(Cli, UsageErrorsExitOne) {
  std::string err;
  EXPECT_EQ(run_cli({}, nullptr, &err), kExitUsage);
  EXPECT_NE(err.find("account"), std::string::npos);
  EXPECT_EQ(run_cli({"bogus"}), kExitUsage);
  EXPECT_EQ(run_cli({"eval", "--unknown-flag"}), kExitUsage);
}

TEST(Cli, MissingFileExitsTwoNamingThePath) {
  TempDir dir;
  std::string err;
  const auto missing = (dir / "absent.ckpt").string();
  EXPECT_EQ(run_cli({"eval", "--model", missing, "--data", dir.path().string()}, nullptr, &err),
            kExitRuntime);
  EXPECT_NE(err.find(missing), std::string::npos) << err;
}

TEST(Cli, AccountVitThreeMerges) {
  std::string out;
  ASSERT_EQ(run_cli({"account", "--arch", "vit-base-16", "--merge-blocks", "3"}, &out), kExitOk);
  const auto j = nlohmann::json::parse(out);
  ASSERT_EQ(j["accounts"].size(), 1u);
  EXPECT_EQ(j["accounts"][0]["params_before"], 85806346);
  EXPECT_EQ(j["accounts"][0]["params_after"], 73410826);
  EXPECT_EQ(j["accounts"][0]["blocks"][0]["params_saved"], 4131840);
}

TEST(Cli, MergeAndEvalOnSavedModel) {
  TempDir dir;
  nn::Model m = trojan::victim_model({1, 16, 16}, 4, 8);
  m.layer(5) = nn::ParametricActivation::pinned(nn::ActivationKind::PReLU, 1.0f);
  save_checkpoint(m, dir / "victim.ckpt");
  save_dataset(trojan::synth_shapes(40, 4, 16, 16, 1), dir / "test.ckpt");
  std::string out;
  ASSERT_EQ(run_cli({"merge", "--model", (dir / "victim.ckpt").string(), "--out",
                     (dir / "merged.ckpt").string()},
                    &out),
            kExitOk);
  const nn::Model merged = load_checkpoint(dir / "merged.ckpt");
  EXPECT_LT(merged.size(), m.size());
  ASSERT_EQ(run_cli({"eval", "--model", (dir / "merged.ckpt").string(), "--data",
                     (dir / "test.ckpt").string()},
                    &out),
            kExitOk);
  EXPECT_NO_THROW(nlohmann::json::parse(out));
}

}  // namespace
}  // namespace mergeguard::io
