#include "mergeguard/defense/accounting.hpp"

#include <algorithm>

#include <json.hpp>

#include "mergeguard/merge/compression.hpp"

namespace mergeguard::defense {

namespace {

using json = nlohmann::json;

constexpr std::string_view kVitBase16 = R"({
  "name": "vit-base-16",
  "layers": [
    {"kind": "conv", "name": "patch_embed", "k": 16, "c_in": 3, "c_out": 768, "h_out": 14, "w_out": 14},
    {"kind": "opaque", "name": "cls_token", "params": 768},
    {"kind": "opaque", "name": "pos_embed", "params": 151296},
    {"repeat": 12, "layers": [
      {"kind": "opaque", "name": "norm1", "params": 1536},
      {"kind": "dense", "name": "attn.qkv", "in": 768, "out": 2304, "tokens": 196},
      {"kind": "opaque", "name": "attn.scores", "macs": 59006976},
      {"kind": "dense", "name": "attn.proj", "in": 768, "out": 768, "tokens": 196},
      {"kind": "opaque", "name": "norm2", "params": 1536},
      {"kind": "dense", "name": "mlp.fc1", "in": 768, "out": 3072, "tokens": 196},
      {"kind": "activation", "name": "mlp.act"},
      {"kind": "dense", "name": "mlp.fc2", "in": 3072, "out": 768, "tokens": 196}
    ]},
    {"kind": "opaque", "name": "norm", "params": 1536},
    {"kind": "dense", "name": "head", "in": 768, "out": 10}
  ]
})";

std::size_t need(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw AccountingError(where + ": missing field '" + key + "'");
  if (!j.at(key).is_number_unsigned()) {
    throw AccountingError(where + ": field '" + key + "' must be a non-negative integer");
  }
  return j.at(key).get<std::size_t>();
}

std::size_t opt(const json& j, const char* key, std::size_t fallback, const std::string& where) {
  return j.contains(key) ? need(j, key, where) : fallback;
}

void parse_layers(const json& list, std::vector<ArchLayer>& out, const std::string& where) {
  if (!list.is_array()) throw AccountingError(where + ": 'layers' must be an array");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const json& j = list[i];
    const std::string here = where + "[" + std::to_string(i) + "]";
    if (!j.is_object()) throw AccountingError(here + ": layer must be an object");
    if (j.contains("repeat")) {
      const std::size_t n = need(j, "repeat", here);
      if (!j.contains("layers")) throw AccountingError(here + ": repeat group without 'layers'");
      std::vector<ArchLayer> body;
      parse_layers(j.at("layers"), body, here + ".layers");
      for (std::size_t r = 0; r < n; ++r) out.insert(out.end(), body.begin(), body.end());
      continue;
    }
    if (!j.contains("kind") || !j.at("kind").is_string()) {
      throw AccountingError(here + ": missing layer kind");
    }
    const std::string kind = j.at("kind").get<std::string>();
    ArchLayer l;
    l.name = j.value("name", std::string{});
    l.bias = j.value("bias", true);
    if (kind == "dense") {
      l.kind = ArchLayer::Kind::Dense;
      l.in = need(j, "in", here);
      l.out = need(j, "out", here);
      l.tokens = opt(j, "tokens", 1, here);
    } else if (kind == "conv") {
      l.kind = ArchLayer::Kind::Conv;
      l.k = need(j, "k", here);
      l.c_in = need(j, "c_in", here);
      l.c_out = need(j, "c_out", here);
      l.h_out = need(j, "h_out", here);
      l.w_out = need(j, "w_out", here);
    } else if (kind == "activation") {
      l.kind = ArchLayer::Kind::Activation;
    } else if (kind == "opaque") {
      l.kind = ArchLayer::Kind::Opaque;
      l.params = opt(j, "params", 0, here);
      l.macs = opt(j, "macs", 0, here);
    } else {
      throw AccountingError(here + ": unknown layer kind '" + kind + "'");
    }
    out.push_back(std::move(l));
  }
}

bool mergeable_triple(const std::vector<ArchLayer>& layers, std::size_t p) {
  const auto& a = layers[p];
  const auto& act = layers[p + 1];
  const auto& b = layers[p + 2];
  return a.kind == ArchLayer::Kind::Dense && act.kind == ArchLayer::Kind::Activation &&
         b.kind == ArchLayer::Kind::Dense && a.out == b.in && a.tokens == b.tokens;
}

}  // namespace

ArchDescriptor parse_arch(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw AccountingError(std::string("architecture descriptor: ") + e.what());
  }
  if (!j.is_object() || !j.contains("layers")) {
    throw AccountingError("architecture descriptor: expected an object with 'layers'");
  }
  ArchDescriptor arch;
  arch.name = j.value("name", std::string{"custom"});
  parse_layers(j.at("layers"), arch.layers, "layers");
  return arch;
}

ArchDescriptor vit_base_16() { return parse_arch(kVitBase16); }

ArchDescriptor bundled_arch(std::string_view name) {
  if (name == "vit-base-16") return vit_base_16();
  throw AccountingError("unknown bundled architecture '" + std::string(name) +
                        "' (available: vit-base-16)");
}

ArchDescriptor describe(const nn::Model& model) {
  ArchDescriptor arch;
  arch.name = "model";
  const auto shapes = model.shapes();
  for (std::size_t i = 0; i < model.size(); ++i) {
    const nn::Layer& layer = model.layer(i);
    ArchLayer l;
    l.name = std::to_string(i);
    if (const auto* d = std::get_if<nn::DenseLayer>(&layer)) {
      l.kind = ArchLayer::Kind::Dense;
      l.in = d->in();
      l.out = d->out();
    } else if (const auto* c = std::get_if<nn::Conv2dLayer>(&layer)) {
      l.kind = ArchLayer::Kind::Conv;
      l.k = c->kernel_size();
      l.c_in = c->c_in();
      l.c_out = c->c_out();
      l.h_out = shapes[i + 1][1];
      l.w_out = shapes[i + 1][2];
    } else if (std::holds_alternative<nn::ParametricActivation>(layer)) {
      l.kind = ArchLayer::Kind::Activation;
    } else {
      l.kind = ArchLayer::Kind::Opaque;
    }
    arch.layers.push_back(l);
  }
  return arch;
}

std::size_t layer_weights(const ArchLayer& l) {
  switch (l.kind) {
    case ArchLayer::Kind::Dense: return l.in * l.out;
    case ArchLayer::Kind::Conv: return l.k * l.k * l.c_in * l.c_out;
    case ArchLayer::Kind::Activation: return 0;
    case ArchLayer::Kind::Opaque: return l.params;
  }
  return 0;
}

std::size_t layer_params(const ArchLayer& l) {
  switch (l.kind) {
    case ArchLayer::Kind::Dense: return layer_weights(l) + (l.bias ? l.out : 0);
    case ArchLayer::Kind::Conv: return layer_weights(l) + (l.bias ? l.c_out : 0);
    default: return layer_weights(l);
  }
}

std::size_t layer_macs(const ArchLayer& l) {
  switch (l.kind) {
    case ArchLayer::Kind::Dense: return l.in * l.out * l.tokens;
    case ArchLayer::Kind::Conv: return l.k * l.k * l.c_in * l.c_out * l.h_out * l.w_out;
    case ArchLayer::Kind::Activation: return 0;
    case ArchLayer::Kind::Opaque: return l.macs;
  }
  return 0;
}

namespace {

template <typename F>
std::size_t total(const ArchDescriptor& arch, F f) {
  std::size_t s = 0;
  for (const auto& l : arch.layers) s += f(l);
  return s;
}

}  // namespace

std::size_t count_params(const ArchDescriptor& arch) { return total(arch, layer_params); }
std::size_t count_weights(const ArchDescriptor& arch) { return total(arch, layer_weights); }
std::size_t count_macs(const ArchDescriptor& arch) { return total(arch, layer_macs); }

std::size_t count_params(const nn::Model& model) { return count_params(describe(model)); }
std::size_t count_macs(const nn::Model& model) { return count_macs(describe(model)); }

std::vector<std::size_t> arch_mergeable_blocks(const ArchDescriptor& arch) {
  std::vector<std::size_t> found;
  std::size_t end = arch.layers.size();
  while (end >= 3) {
    const std::size_t pos = end - 3;
    if (mergeable_triple(arch.layers, pos)) {
      found.push_back(pos);
      end = pos;
    } else {
      --end;
    }
  }
  std::reverse(found.begin(), found.end());
  return found;
}

AccountReport account(const ArchDescriptor& arch, std::size_t merge_blocks) {
  const auto blocks = arch_mergeable_blocks(arch);
  if (merge_blocks > blocks.size()) {
    throw AccountingError(arch.name + ": " + std::to_string(merge_blocks) +
                          " merges requested, only " + std::to_string(blocks.size()) +
                          " mergeable blocks");
  }
  AccountReport r;
  r.arch = arch.name;
  r.blocks_available = blocks.size();
  r.blocks_merged = merge_blocks;
  r.params_before = count_params(arch);
  r.weights_before = count_weights(arch);
  r.macs_before = count_macs(arch);
  r.params_after = r.params_before;
  r.weights_after = r.weights_before;
  r.macs_after = r.macs_before;
  for (std::size_t i = blocks.size() - merge_blocks; i < blocks.size(); ++i) {
    const auto& a = arch.layers[blocks[i]];
    const auto& b = arch.layers[blocks[i] + 2];
    ArchLayer fused = a;
    fused.out = b.out;
    fused.bias = a.bias || b.bias;
    BlockSaving s;
    s.position = blocks[i];
    s.params_block = layer_params(a) + layer_params(b);
    s.weights_block = layer_weights(a) + layer_weights(b);
    s.macs_block = layer_macs(a) + layer_macs(b);
    s.params_fused = layer_params(fused);
    s.weights_fused = layer_weights(fused);
    s.macs_fused = layer_macs(fused);
    s.compression_ratio = merge::compression_ratio_dense({a.in, a.out, b.out});
    r.params_after = r.params_after - s.params_block + s.params_fused;
    r.weights_after = r.weights_after - s.weights_block + s.weights_fused;
    r.macs_after = r.macs_after - s.macs_block + s.macs_fused;
    r.blocks.push_back(s);
  }
  r.param_reduction = 1.0 - static_cast<double>(r.params_after) / static_cast<double>(r.params_before);
  r.mac_reduction = 1.0 - static_cast<double>(r.macs_after) / static_cast<double>(r.macs_before);
  return r;
}

}  // namespace mergeguard::defense
