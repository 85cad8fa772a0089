#include "mergeguard/io/report.hpp"

#include <cstdio>

#include "mergeguard/io/checkpoint.hpp"

namespace mergeguard::io {

namespace {

using json = nlohmann::json;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json phase(const defense::PhaseMetrics& m) {
  return {{"test_acc", m.test_acc}, {"asr", optional_number(m.asr)}, {"params", m.params},
          {"macs", m.macs}};
}

json run_json(const defense::DefenseRun& run) {
  json sweep = json::array();
  for (const auto& t : run.sweep) {
    sweep.push_back({{"learning_rate", t.learning_rate},
                     {"val_acc", t.val_acc},
                     {"val_asr", optional_number(t.val_asr)},
                     {"merged_blocks", t.merged_blocks},
                     {"diverged", t.diverged},
                     {"selected", t.selected}});
  }
  json blocks = json::array();
  for (const auto& b : run.blocks) {
    blocks.push_back({{"position", b.position},
                      {"family", b.family == merge::BlockFamily::Dense ? "dense" : "conv"},
                      {"alpha", b.alpha},
                      {"merged", b.merged},
                      {"compression_ratio", b.compression_ratio},
                      {"weight_reduction", b.weight_reduction},
                      {"weights_block", b.weights_block},
                      {"weights_fused", b.weights_fused},
                      {"params_block", b.params_block},
                      {"params_fused", b.params_fused}});
  }
  return {{"method", defense::to_string(run.method)},
          {"learning_rate", run.learning_rate},
          {"sweep", std::move(sweep)},
          {"blocks", std::move(blocks)},
          {"merge_safety_delta", run.merge_safety_delta},
          {"steps", run.steps},
          {"final_loss", run.final_loss},
          {"final_cross_entropy", run.final_cross_entropy},
          {"final_regularizer", run.final_regularizer}};
}

std::string cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v.get<double>());
    return buf;
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

// Weight-only compression over the merged blocks; null when none merged.
json merged_cr(const json& blocks) {
  double block = 0.0, fused = 0.0;
  for (const auto& b : blocks) {
    if (!b.at("merged").get<bool>()) continue;
    block += b.at("weights_block").get<double>();
    fused += b.at("weights_fused").get<double>();
  }
  if (block == 0.0) return nullptr;
  return 1.0 - fused / block;
}

}  // namespace

ReportFormat report_format_from_string(std::string_view name) {
  if (name == "json") return ReportFormat::Json;
  if (name == "csv") return ReportFormat::Csv;
  throw ConfigError("unknown report format '" + std::string(name) + "' (expected json or csv)");
}

json to_json(const defense::ExperimentReport& r) {
  json defenses = json::array();
  for (const auto& d : r.defenses) {
    defenses.push_back({{"run", run_json(d.run)}, {"before", phase(d.before)},
                        {"after", phase(d.after)}});
  }
  json safety = json::array();
  for (const auto& c : r.clean_safety) {
    safety.push_back({{"method", defense::to_string(c.method)},
                      {"test_acc_before", c.test_acc_before},
                      {"test_acc_after", c.test_acc_after},
                      {"merged_blocks", c.merged_blocks}});
  }
  return {{"attack", r.attack},
          {"target", r.target},
          {"poison_ratio", r.poison_ratio},
          {"seed", r.seed},
          {"sizes",
           {{"victim_train", r.victim_train_size},
            {"benign", r.benign_size},
            {"val", r.val_size},
            {"test", r.test_size}}},
          {"poisoned_count", r.poisoned_count},
          {"trojaned", phase(r.trojaned)},
          {"defenses", std::move(defenses)},
          {"clean_safety", std::move(safety)},
          {"config", r.config},
          {"failed_stage", r.failed_stage.empty() ? json(nullptr) : json(r.failed_stage)}};
}

json to_json(const merge::BoundReport& r) {
  return {{"delta", r.delta},
          {"x_delta", r.x_delta},
          {"c", r.c},
          {"alpha", r.alpha},
          {"empirical_violation_rate", r.empirical_violation_rate},
          {"sample_count", r.sample_count},
          {"violations", r.violations}};
}

json to_json(const defense::AccountReport& r) {
  json blocks = json::array();
  for (const auto& b : r.blocks) {
    blocks.push_back({{"position", b.position},
                      {"params_block", b.params_block},
                      {"params_fused", b.params_fused},
                      {"params_saved", b.params_block - b.params_fused},
                      {"weights_block", b.weights_block},
                      {"weights_fused", b.weights_fused},
                      {"macs_block", b.macs_block},
                      {"macs_fused", b.macs_fused},
                      {"compression_ratio", b.compression_ratio}});
  }
  return {{"arch", r.arch},
          {"blocks_available", r.blocks_available},
          {"blocks_merged", r.blocks_merged},
          {"params_before", r.params_before},
          {"params_after", r.params_after},
          {"weights_before", r.weights_before},
          {"weights_after", r.weights_after},
          {"macs_before", r.macs_before},
          {"macs_after", r.macs_after},
          {"param_reduction", r.param_reduction},
          {"mac_reduction", r.mac_reduction},
          {"blocks", std::move(blocks)}};
}

json to_json(const std::vector<defense::StageTiming>& timings) {
  json stages = json::array();
  for (const auto& t : timings) stages.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
  return {{"stages", std::move(stages)}};
}

std::string render_json(const json& j) { return j.dump(2) + "\n"; }

std::string render_csv(const json& report) {
  std::string out(kCsvHeader);
  out += "\n";
  try {
    const json& trojaned = report.at("trojaned");
    for (const auto& d : report.at("defenses")) {
      const json& after = d.at("after");
      const json& run = d.at("run");
      const json cr = run.at("method") == "mergeguard" ? merged_cr(run.at("blocks")) : json(nullptr);
      out += cell(report.at("attack")) + "," + cell(run.at("method")) + "," +
             cell(trojaned.at("test_acc")) + "," + cell(trojaned.at("asr")) + "," +
             cell(after.at("test_acc")) + "," + cell(after.at("asr")) + "," +
             cell(d.at("before").at("params")) + "," + cell(after.at("params")) + "," + cell(cr) +
             "\n";
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("report JSON does not match the report schema: ") + e.what());
  }
  return out;
}

std::string render(const defense::ExperimentReport& report, ReportFormat format) {
  const json j = to_json(report);
  return format == ReportFormat::Json ? render_json(j) : render_csv(j);
}

void emit_report(const defense::ExperimentReport& report, ReportFormat format,
                 const std::filesystem::path& path) {
  write_file(path, render(report, format));
}

}  // namespace mergeguard::io
