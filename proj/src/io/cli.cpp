#include "mergeguard/io/cli.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mergeguard/defense/accounting.hpp"
#include "mergeguard/defense/experiment.hpp"
#include "mergeguard/io/checkpoint.hpp"
#include "mergeguard/io/config.hpp"
#include "mergeguard/io/report.hpp"
#include "mergeguard/merge/blocks.hpp"
#include "mergeguard/merge/bound.hpp"
#include "mergeguard/merge/fuse.hpp"
#include "mergeguard/trojan/metrics.hpp"

namespace mergeguard::io {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// File names inside a data directory written by train-victim.
constexpr const char* kBenign = "benign.ckpt";
constexpr const char* kVal = "val.ckpt";
constexpr const char* kValTriggered = "val_triggered.ckpt";
constexpr const char* kTest = "test.ckpt";
constexpr const char* kTestTriggered = "test_triggered.ckpt";
constexpr const char* kPoisonedTrain = "poisoned_train.ckpt";
constexpr const char* kVictim = "victim.ckpt";

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct ModelArgs {
  std::string model;
  std::string data;
  std::string out;
  std::string method;
  double threshold = 0.99;
  std::size_t blocks = 0;
  int target = 0;
  std::optional<std::size_t> block;
  double delta = 0.01;
  std::optional<double> alpha;
};

struct ReportArgs {
  std::string in;
  std::string format = "json";
  std::string out;
};

struct AccountArgs {
  std::string arch;
  std::string arch_file;
  std::string model;
  std::vector<std::size_t> merge_blocks;
  std::string out;
};

RunConfig resolve_config(const RunArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (a.seed) cfg.experiment.apply_seed(*a.seed);
  if (!a.out.empty()) cfg.output_dir = a.out;
  cfg.experiment.validate();
  return cfg;
}

void emit(std::ostream& out, const json& j, const std::string& path) {
  const std::string text = render_json(j);
  if (path.empty()) {
    out << text;
  } else {
    write_file(path, text);
  }
}

// "defended-<method>.ckpt", disambiguated by index when a method repeats.
std::vector<std::string> defended_names(const std::vector<defense::DefenseConfig>& defenses) {
  std::map<defense::Method, int> count;
  for (const auto& d : defenses) ++count[d.method];
  std::vector<std::string> names;
  for (std::size_t i = 0; i < defenses.size(); ++i) {
    const std::string method(defense::to_string(defenses[i].method));
    names.push_back(count[defenses[i].method] > 1
                        ? "defended-" + std::to_string(i) + "-" + method + ".ckpt"
                        : "defended-" + method + ".ckpt");
  }
  return names;
}

void write_reports(const defense::ExperimentReport& report, const fs::path& dir) {
  emit_report(report, ReportFormat::Json, dir / "report.json");
  emit_report(report, ReportFormat::Csv, dir / "report.csv");
}

int cmd_run(const RunArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a);
  const fs::path dir = cfg.output_dir;
  defense::ExperimentResult result;
  try {
    result = defense::run_experiment(cfg.experiment);
  } catch (const defense::StageError& e) {
    auto partial = e.partial();
    partial.config = to_json(cfg);
    emit_report(partial, ReportFormat::Json, dir / "report.json");
    throw;
  }
  result.report.config = to_json(cfg);
  write_reports(result.report, dir);
  write_file(dir / "timings.json", render_json(to_json(result.timings)));
  const CheckpointMeta meta{cfg.experiment.seed, "victim"};
  save_checkpoint(result.victim, dir / kVictim, meta);
  const auto names = defended_names(cfg.experiment.defenses);
  for (std::size_t i = 0; i < result.defended.size(); ++i) {
    save_checkpoint(result.defended[i], dir / names[i], {cfg.experiment.seed, names[i]});
  }
  out << render(result.report, ReportFormat::Csv);
  return kExitOk;
}

int cmd_train_victim(const RunArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a);
  const auto& x = cfg.experiment;
  const fs::path dir = cfg.output_dir;
  const auto data = defense::prepare_data(x);
  const auto poisoned = trojan::poison(data.victim_train, x.attack);
  const auto val_triggered = trojan::triggered_eval_set(data.val, x.attack);
  const auto test_triggered = trojan::triggered_eval_set(data.test, x.attack);
  const nn::Model victim = defense::train_victim(x, poisoned);
  const CheckpointMeta meta{x.seed, {}};
  save_checkpoint(victim, dir / kVictim, meta);
  save_dataset(poisoned, dir / kPoisonedTrain, meta);
  save_dataset(data.benign, dir / kBenign, meta);
  save_dataset(data.val, dir / kVal, meta);
  save_dataset(val_triggered, dir / kValTriggered, meta);
  save_dataset(data.test, dir / kTest, meta);
  save_dataset(test_triggered, dir / kTestTriggered, meta);
  const auto m = defense::measure(victim, data.test, test_triggered, x.attack.target);
  const json summary = {{"test_acc", m.test_acc},
                        {"asr", m.asr ? json(*m.asr) : json(nullptr)},
                        {"params", m.params},
                        {"macs", m.macs},
                        {"poisoned_count", poisoned.poisoned_count()}};
  write_file(dir / "victim.json", render_json(summary));
  out << render_json(summary);
  return kExitOk;
}

int cmd_defend(const RunArgs& a, const ModelArgs& m, std::ostream& out) {
  RunConfig cfg = resolve_config(a);
  auto& x = cfg.experiment;
  if (!m.method.empty()) {
    const auto method = defense::method_from_string(m.method);
    std::erase_if(x.defenses, [&](const auto& d) { return d.method != method; });
    if (x.defenses.empty()) {
      defense::DefenseConfig d;
      d.method = method;
      d.seed = x.seed;
      x.defenses.push_back(d);
    }
  }
  const fs::path data = m.data;
  const nn::Model victim = load_checkpoint(m.model);
  const auto benign = load_dataset(data / kBenign);
  const auto val = load_dataset(data / kVal);
  const auto val_triggered = load_dataset(data / kValTriggered);
  const auto test = load_dataset(data / kTest);
  const auto test_triggered = load_dataset(data / kTestTriggered);

  defense::ExperimentReport report;
  report.attack = std::string(trojan::to_string(x.attack.attack));
  report.target = x.attack.target;
  report.poison_ratio = x.attack.ratio;
  report.seed = x.seed;
  report.benign_size = benign.size();
  report.val_size = val.size();
  report.test_size = test.size();
  report.trojaned = defense::measure(victim, test, test_triggered, x.attack.target);
  report.config = to_json(cfg);
  const defense::SelectionSets selection{&val, &val_triggered, x.attack.target};
  const fs::path dir = cfg.output_dir;
  const auto names = defended_names(x.defenses);
  for (std::size_t i = 0; i < x.defenses.size(); ++i) {
    auto outcome = defense::defend(victim, benign, x.defenses[i], selection);
    defense::DefenseSummary s;
    s.before = report.trojaned;
    s.after = defense::measure(outcome.model, test, test_triggered, x.attack.target);
    s.run = std::move(outcome.run);
    report.defenses.push_back(std::move(s));
    save_checkpoint(outcome.model, dir / names[i], {x.seed, names[i]});
  }
  write_reports(report, dir);
  out << render(report, ReportFormat::Csv);
  return kExitOk;
}

int cmd_merge(const ModelArgs& m, std::ostream& out) {
  nn::Model model = load_checkpoint(m.model);
  const auto available = merge::find_mergeable_blocks(model);
  const std::size_t k = m.blocks == 0 ? available.size() : m.blocks;
  const auto blocks = merge::last_blocks(model, k);
  const auto records = merge::finalize_merge(model, blocks, m.threshold);
  json list = json::array();
  for (const auto& r : records) {
    list.push_back({{"position", r.position},
                    {"family", r.family == merge::BlockFamily::Dense ? "dense" : "conv"},
                    {"alpha", r.alpha},
                    {"merged", r.merged},
                    {"weights_block", r.weights_block},
                    {"weights_fused", r.weights_fused},
                    {"params_block", r.params_block},
                    {"params_fused", r.params_fused},
                    {"compression_ratio", r.compression_ratio},
                    {"weight_reduction", r.weight_reduction},
                    {"kernel_size", r.kernel_size}});
  }
  save_checkpoint(model, m.out);
  out << render_json({{"blocks", std::move(list)},
                      {"params_after", defense::count_params(model)},
                      {"output", m.out}});
  return kExitOk;
}

// A directory resolves to the named file inside it; a file is used as is.
fs::path data_path(const std::string& data, const char* name) {
  const fs::path p = data;
  return fs::is_directory(p) ? p / name : p;
}

int cmd_eval(const ModelArgs& m, std::ostream& out) {
  const nn::Model model = load_checkpoint(m.model);
  const auto test = load_dataset(data_path(m.data, kTest));
  std::optional<trojan::LabeledImageSet> triggered;
  if (fs::is_directory(m.data)) triggered = load_dataset(fs::path(m.data) / kTestTriggered);
  const auto metrics = defense::measure(model, test, triggered, m.target);
  const json j = {{"test_acc", metrics.test_acc},
                  {"asr", metrics.asr ? json(*metrics.asr) : json(nullptr)},
                  {"params", metrics.params},
                  {"macs", metrics.macs},
                  {"samples", test.size()}};
  emit(out, j, m.out);
  return kExitOk;
}

int cmd_audit_bound(const ModelArgs& m, std::ostream& out) {
  const nn::Model model = load_checkpoint(m.model);
  const auto samples_set = load_dataset(data_path(m.data, kBenign));
  const auto blocks = merge::find_mergeable_blocks(model);
  if (blocks.empty()) throw MergeError(m.model + ": model has no mergeable block");
  const std::size_t index = m.block.value_or(blocks.size() - 1);
  if (index >= blocks.size()) {
    throw ContractError("--block " + std::to_string(index) + " out of range, model has " +
                        std::to_string(blocks.size()) + " mergeable blocks");
  }
  const auto& mb = blocks[index];
  if (mb.family != merge::BlockFamily::Dense) {
    throw UnsupportedMergeError("audit-bound needs a dense block; block " + std::to_string(index) +
                                " at layer " + std::to_string(mb.position) + " is a convolution");
  }
  merge::DenseBlock block = merge::dense_block(model, mb);
  if (m.alpha) {
    block.activation =
        nn::ParametricActivation::pinned(block.activation.kind, static_cast<float>(*m.alpha),
                                         block.activation.beta);
  }
  const Tensor inputs = model.activations(samples_set.images, mb.position);
  const Tensor flat = inputs.reshaped({inputs.dim(0), block.first.in()});
  const auto report = merge::audit_bound(block, flat, m.delta);
  json j = to_json(report);
  j["block"] = index;
  j["position"] = mb.position;
  emit(out, j, m.out);
  return kExitOk;
}

int cmd_report(const ReportArgs& r, std::ostream& out) {
  const auto format = report_format_from_string(r.format);
  const std::string text = read_file(r.in);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(r.in + ": not valid JSON: " + e.what());
  }
  const std::string rendered = format == ReportFormat::Json ? render_json(j) : render_csv(j);
  if (r.out.empty()) {
    out << rendered;
  } else {
    write_file(r.out, rendered);
  }
  return kExitOk;
}

int cmd_account(const AccountArgs& a, std::ostream& out) {
  defense::ArchDescriptor arch;
  if (!a.arch_file.empty()) {
    arch = defense::parse_arch(read_file(a.arch_file));
  } else if (!a.model.empty()) {
    arch = defense::describe(load_checkpoint(a.model));
  } else {
    arch = defense::bundled_arch(a.arch.empty() ? "vit-base-16" : a.arch);
  }
  std::vector<std::size_t> merges = a.merge_blocks;
  if (merges.empty()) {
    // The bundled ViT is reported under both readings of its merge count.
    if (arch.name == "vit-base-16") {
      merges = {3, 4};
    } else {
      merges = {defense::arch_mergeable_blocks(arch).size()};
    }
  }
  json reports = json::array();
  for (const auto k : merges) reports.push_back(to_json(defense::account(arch, k)));
  emit(out, {{"arch", arch.name}, {"accounts", std::move(reports)}}, a.out);
  return kExitOk;
}

void add_run_flags(CLI::App* sub, RunArgs& a) {
  sub->add_option("--config", a.config, "Run configuration (JSON)");
  sub->add_option("--seed", a.seed, "Override the configuration seed");
  sub->add_option("--out", a.out, "Output directory");
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trojan injection and MergeGuard defense toolkit", "mergeguard"};
  app.require_subcommand(1);

  RunArgs run_args;
  ModelArgs model_args;
  ReportArgs report_args;
  AccountArgs account_args;

  auto* run = app.add_subcommand("run", "Full pipeline: data, poison, victim, defenses, reports");
  add_run_flags(run, run_args);

  auto* train = app.add_subcommand("train-victim", "Poison the data and train a victim model");
  add_run_flags(train, run_args);

  auto* defend = app.add_subcommand("defend", "Apply the configured defenses to a victim");
  add_run_flags(defend, run_args);
  defend->add_option("--model", model_args.model, "Victim checkpoint")->required();
  defend->add_option("--data", model_args.data, "Data directory from train-victim")->required();
  defend->add_option("--method", model_args.method, "Only run this method (mergeguard|ft)");

  auto* merge_cmd = app.add_subcommand("merge", "Snap and fuse linearized blocks of a model");
  merge_cmd->add_option("--model", model_args.model, "Input checkpoint")->required();
  merge_cmd->add_option("--out", model_args.out, "Output checkpoint")->required();
  merge_cmd->add_option("--threshold", model_args.threshold, "Alpha snapping threshold");
  merge_cmd->add_option("--blocks", model_args.blocks, "Consider the last k blocks (0 = all)");

  auto* eval = app.add_subcommand("eval", "Test accuracy and attack success rate");
  eval->add_option("--model", model_args.model, "Model checkpoint")->required();
  eval->add_option("--data", model_args.data, "Data directory or dataset checkpoint")->required();
  eval->add_option("--target", model_args.target, "Attack target label");
  eval->add_option("--out", model_args.out, "Write the result here instead of stdout");

  auto* audit = app.add_subcommand("audit-bound", "Check the non-linearity error bound");
  audit->add_option("--model", model_args.model, "Model checkpoint")->required();
  audit->add_option("--data", model_args.data, "Data directory or dataset checkpoint")->required();
  audit->add_option("--block", model_args.block, "Mergeable block index (default: last)");
  audit->add_option("--delta", model_args.delta, "Quantile level");
  audit->add_option("--alpha", model_args.alpha, "Evaluate at this alpha instead");
  audit->add_option("--out", model_args.out, "Write the result here instead of stdout");

  auto* report = app.add_subcommand("report", "Re-render a report as JSON or CSV");
  report->add_option("--in", report_args.in, "Report JSON")->required();
  report->add_option("--format", report_args.format, "json or csv");
  report->add_option("--out", report_args.out, "Output file (default: stdout)");

  auto* account = app.add_subcommand("account", "Parameter and MAC accounting of block merges");
  auto* arch_opt = account->add_option("--arch", account_args.arch, "Bundled architecture");
  auto* file_opt = account->add_option("--arch-file", account_args.arch_file,
                                       "Architecture descriptor (JSON)");
  auto* model_opt = account->add_option("--model", account_args.model, "Model checkpoint");
  arch_opt->excludes(file_opt)->excludes(model_opt);
  file_opt->excludes(model_opt);
  account->add_option("--merge-blocks", account_args.merge_blocks,
                      "Number of trailing blocks to merge (repeatable)");
  account->add_option("--out", account_args.out, "Write the result here instead of stdout");

  if (argc <= 1) {
    err << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    app.exit(e, out, err);
    err << app.help();
    return kExitUsage;
  }

  try {
    if (run->parsed()) return cmd_run(run_args, out);
    if (train->parsed()) return cmd_train_victim(run_args, out);
    if (defend->parsed()) return cmd_defend(run_args, model_args, out);
    if (merge_cmd->parsed()) return cmd_merge(model_args, out);
    if (eval->parsed()) return cmd_eval(model_args, out);
    if (audit->parsed()) return cmd_audit_bound(model_args, out);
    if (report->parsed()) return cmd_report(report_args, out);
    if (account->parsed()) return cmd_account(account_args, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace mergeguard::io
