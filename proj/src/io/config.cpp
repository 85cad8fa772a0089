#include "mergeguard/io/config.hpp"

#include <set>

#include "mergeguard/io/checkpoint.hpp"

namespace mergeguard::io {

namespace {

using json = nlohmann::json;

constexpr std::string_view kVictimArch = "small-cnn";

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config '" + label() + "' must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "a number");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) fail(key, "a non-negative integer");
    } else {
      if (!v.is_number_integer()) fail(key, "an integer");
    }
    out = v.get<T>();
  }

  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError("config key '" + child(key) + "' must be " + what);
  }

  std::string child(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  /// Throws on the first key that was never read.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + child(it.key()) + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

void read_data(Section s, defense::DataConfig& d) {
  s.read("source", d.source);
  s.read("train_size", d.train_size);
  s.read("val_size", d.val_size);
  s.read("test_size", d.test_size);
  s.read("classes", d.classes);
  s.read("height", d.height);
  s.read("width", d.width);
  s.read("train_images", d.train_images);
  s.read("train_labels", d.train_labels);
  s.read("test_images", d.test_images);
  s.read("test_labels", d.test_labels);
  s.finish();
}

void read_attack(Section s, trojan::PoisonSpec& a) {
  if (s.has("kind")) {
    std::string kind;
    s.read("kind", kind);
    try {
      a.attack = trojan::attack_kind_from_string(kind);
    } catch (const SpecError& e) {
      throw ConfigError("config key '" + s.child("kind") + "': " + e.what());
    }
  }
  s.read("ratio", a.ratio);
  s.read("target", a.target);
  s.read("patch_size", a.patch_size);
  s.read("patch_value", a.patch_value);
  s.read("blend", a.blend);
  s.read("key_seed", a.key_seed);
  s.read("sig_delta", a.sig_delta);
  s.read("sig_frequency", a.sig_frequency);
  s.finish();
}

void read_victim(Section s, defense::VictimConfig& v) {
  if (s.has("arch")) {
    std::string arch;
    s.read("arch", arch);
    if (arch != kVictimArch) {
      throw ConfigError("config key '" + s.child("arch") + "': unknown architecture '" + arch +
                        "' (available: small-cnn)");
    }
  }
  s.read("epochs", v.epochs);
  s.read("batch_size", v.batch_size);
  s.read("learning_rate", v.learning_rate);
  s.read("momentum", v.momentum);
  s.read("hidden", v.hidden);
  s.finish();
}

defense::DefenseConfig read_defense(Section s) {
  defense::DefenseConfig d;
  if (s.has("method")) {
    std::string method;
    s.read("method", method);
    try {
      d.method = defense::method_from_string(method);
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + s.child("method") + "': " + e.what());
    }
  }
  s.read("benign_fraction", d.benign_fraction);
  s.read("lambda", d.lambda);
  s.read("epochs", d.epochs);
  s.read("batch_size", d.batch_size);
  s.read("momentum", d.momentum);
  if (s.has("learning_rate")) {
    const json& lr = s.raw("learning_rate");
    d.learning_rates.clear();
    if (lr.is_number()) {
      d.learning_rates.push_back(lr.get<double>());
    } else if (lr.is_array()) {
      for (const auto& v : lr) {
        if (!v.is_number()) s.fail("learning_rate", "a number or an array of numbers");
        d.learning_rates.push_back(v.get<double>());
      }
    } else {
      s.fail("learning_rate", "a number or an array of numbers");
    }
  }
  s.read("k_last_blocks", d.k_last_blocks);
  s.read("alpha_threshold", d.alpha_threshold);
  s.read("alpha_init", d.alpha_init);
  s.read("alpha_lr_multiplier", d.alpha_lr_multiplier);
  s.read("grad_clip", d.grad_clip);
  s.read("max_acc_drop", d.max_acc_drop);
  s.read("restorative_epochs", d.restorative_epochs);
  s.finish();
  return d;
}

}  // namespace

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig config;
  auto& x = config.experiment;
  Section root(j, "");
  std::uint64_t seed = 0;
  root.read("seed", seed);
  root.read("output_dir", config.output_dir);
  if (root.has("data")) read_data(Section(root.raw("data"), "data"), x.data);
  if (root.has("attack")) read_attack(Section(root.raw("attack"), "attack"), x.attack);
  if (root.has("victim")) read_victim(Section(root.raw("victim"), "victim"), x.victim);
  if (root.has("defense")) {
    const json& d = root.raw("defense");
    x.defenses.clear();
    if (d.is_array()) {
      for (std::size_t i = 0; i < d.size(); ++i) {
        x.defenses.push_back(read_defense(Section(d[i], "defense[" + std::to_string(i) + "]")));
      }
    } else {
      x.defenses.push_back(read_defense(Section(d, "defense")));
    }
  }
  root.read("clean_safety", x.clean_safety);
  root.finish();
  x.apply_seed(seed);
  x.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return parse_run_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json to_json(const RunConfig& config) {
  const auto& x = config.experiment;
  const auto& d = x.data;
  const auto& a = x.attack;
  const auto& v = x.victim;
  json defenses = json::array();
  for (const auto& dc : x.defenses) {
    defenses.push_back({{"method", defense::to_string(dc.method)},
                        {"benign_fraction", dc.benign_fraction},
                        {"lambda", dc.lambda},
                        {"epochs", dc.epochs},
                        {"batch_size", dc.batch_size},
                        {"momentum", dc.momentum},
                        {"learning_rate", dc.learning_rates},
                        {"k_last_blocks", dc.k_last_blocks},
                        {"alpha_threshold", dc.alpha_threshold},
                        {"alpha_init", dc.alpha_init},
                        {"alpha_lr_multiplier", dc.alpha_lr_multiplier},
                        {"grad_clip", dc.grad_clip},
                        {"max_acc_drop", dc.max_acc_drop},
                        {"restorative_epochs", dc.restorative_epochs}});
  }
  return {{"seed", x.seed},
          {"output_dir", config.output_dir},
          {"data",
           {{"source", d.source},
            {"train_size", d.train_size},
            {"val_size", d.val_size},
            {"test_size", d.test_size},
            {"classes", d.classes},
            {"height", d.height},
            {"width", d.width},
            {"train_images", d.train_images},
            {"train_labels", d.train_labels},
            {"test_images", d.test_images},
            {"test_labels", d.test_labels}}},
          {"attack",
           {{"kind", trojan::to_string(a.attack)},
            {"ratio", a.ratio},
            {"target", a.target},
            {"patch_size", a.patch_size},
            {"patch_value", a.patch_value},
            {"blend", a.blend},
            {"key_seed", a.key_seed},
            {"sig_delta", a.sig_delta},
            {"sig_frequency", a.sig_frequency}}},
          {"victim",
           {{"arch", kVictimArch},
            {"epochs", v.epochs},
            {"batch_size", v.batch_size},
            {"learning_rate", v.learning_rate},
            {"momentum", v.momentum},
            {"hidden", v.hidden}}},
          {"defense", std::move(defenses)},
          {"clean_safety", x.clean_safety}};
}

}  // namespace mergeguard::io
