#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mergeguard/defense/accounting.hpp"
#include "mergeguard/defense/experiment.hpp"
#include "mergeguard/merge/bound.hpp"

namespace mergeguard::io {

enum class ReportFormat { Json, Csv };

ReportFormat report_format_from_string(std::string_view name);

inline constexpr std::string_view kCsvHeader =
    "attack,defense,test_acc_trojaned,asr_trojaned,test_acc_defended,asr_defended,"
    "params_before,params_after,cr";

nlohmann::json to_json(const defense::ExperimentReport& report);
nlohmann::json to_json(const merge::BoundReport& report);
nlohmann::json to_json(const defense::AccountReport& report);
nlohmann::json to_json(const std::vector<defense::StageTiming>& timings);

/// Objects are key-sorted; two-space indent and a trailing newline.
std::string render_json(const nlohmann::json& j);

/// One row per defense of an experiment report given as JSON (see
/// to_json). Missing ASR or an unmerged defense leave the cell empty; cr is
/// the weight-only ratio over the merged blocks.
std::string render_csv(const nlohmann::json& report);

std::string render(const defense::ExperimentReport& report, ReportFormat format);

void emit_report(const defense::ExperimentReport& report, ReportFormat format,
                 const std::filesystem::path& path);

}  // namespace mergeguard::io
