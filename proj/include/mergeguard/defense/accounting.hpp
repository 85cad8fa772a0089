#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "mergeguard/nn/model.hpp"

namespace mergeguard::defense {

/// One entry of a declarative architecture. Dense and conv layers are
/// counted from their dimensions; opaque entries (attention, norms,
/// embeddings) carry fixed counts and are never merged.
struct ArchLayer {
  enum class Kind { Dense, Conv, Activation, Opaque };

  Kind kind = Kind::Opaque;
  std::string name;
  // Dense: in -> out, applied to `tokens` positions per sample.
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t tokens = 1;
  // Conv: k x k kernel, c_in -> c_out, producing h_out x w_out.
  std::size_t k = 0;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t h_out = 0;
  std::size_t w_out = 0;
  bool bias = true;
  // Opaque.
  std::size_t params = 0;
  std::size_t macs = 0;

  friend bool operator==(const ArchLayer&, const ArchLayer&) = default;
};

struct ArchDescriptor {
  std::string name;
  std::vector<ArchLayer> layers;
};

/// Parses {"name": ..., "layers": [...]} where each layer is an object with
/// "kind" in {dense, conv, activation, opaque} or a group
/// {"repeat": n, "layers": [...]}. Throws AccountingError on unknown kinds
/// or missing fields.
ArchDescriptor parse_arch(std::string_view json_text);

/// ViT-Base/16 with a 10-class head and 196 patch tokens.
ArchDescriptor vit_base_16();

/// Looks up a bundled descriptor by name ("vit-base-16").
ArchDescriptor bundled_arch(std::string_view name);

/// Descriptor of an executable model; spatial sizes come from its shapes.
ArchDescriptor describe(const nn::Model& model);

std::size_t layer_params(const ArchLayer& layer);
std::size_t layer_weights(const ArchLayer& layer);
std::size_t layer_macs(const ArchLayer& layer);

std::size_t count_params(const ArchDescriptor& arch);
std::size_t count_weights(const ArchDescriptor& arch);
std::size_t count_macs(const ArchDescriptor& arch);

/// Weights and biases of every dense and conv layer; activation alphas are
/// not counted.
std::size_t count_params(const nn::Model& model);
std::size_t count_macs(const nn::Model& model);

struct BlockSaving {
  std::size_t position = 0;
  std::size_t params_block = 0;
  std::size_t params_fused = 0;
  std::size_t weights_block = 0;
  std::size_t weights_fused = 0;
  std::size_t macs_block = 0;
  std::size_t macs_fused = 0;
  double compression_ratio = 0.0;
};

struct AccountReport {
  std::string arch;
  std::size_t blocks_available = 0;
  std::size_t blocks_merged = 0;
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  std::size_t weights_before = 0;
  std::size_t weights_after = 0;
  std::size_t macs_before = 0;
  std::size_t macs_after = 0;
  double param_reduction = 0.0;
  double mac_reduction = 0.0;
  std::vector<BlockSaving> blocks;
};

/// Mergeable blocks of a descriptor: dense, activation, dense with
/// matching widths and token counts, non-overlapping, chosen from the end.
std::vector<std::size_t> arch_mergeable_blocks(const ArchDescriptor& arch);

/// Counts before and after fusing the last `merge_blocks` mergeable blocks.
/// Throws AccountingError if fewer are available.
AccountReport account(const ArchDescriptor& arch, std::size_t merge_blocks);

}  // namespace mergeguard::defense
