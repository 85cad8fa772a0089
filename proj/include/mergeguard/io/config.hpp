#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "mergeguard/defense/experiment.hpp"

namespace mergeguard::io {

// Config file schema (every key optional, defaults as in ExperimentConfig):
//
//   seed          unsigned integer, the only source of randomness
//   output_dir    string
//   data          {source: "synthetic" | "idx", train_size, val_size, test_size,
//                  classes, height, width, train_images, train_labels,
//                  test_images, test_labels}
//   attack        {kind: "badnet" | "blended" | "sig", ratio, target, patch_size,
//                  patch_value, blend, key_seed, sig_delta, sig_frequency}
//   victim        {arch: "small-cnn", epochs, batch_size, learning_rate, momentum,
//                  hidden}
//   defense       object or array of objects {method: "mergeguard" | "ft",
//                  benign_fraction, lambda, epochs, batch_size, momentum,
//                  learning_rate (number or array), k_last_blocks,
//                  alpha_threshold, alpha_init, alpha_lr_multiplier,
//                  grad_clip, max_acc_drop, restorative_epochs}
//   clean_safety  bool
//
// Unknown keys and mistyped values raise ConfigError naming the key path,
// e.g. "defense[0].lamda".
struct RunConfig {
  defense::ExperimentConfig experiment;
  std::string output_dir = "out";
};

RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully expanded config, every field present; parses back to an equal
/// configuration.
nlohmann::json to_json(const RunConfig& config);

}  // namespace mergeguard::io
