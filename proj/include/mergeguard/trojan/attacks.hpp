#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "mergeguard/trojan/dataset.hpp"

namespace mergeguard::trojan {

enum class AttackKind { BadNet, Blended, SIG };

std::string_view to_string(AttackKind kind);
AttackKind attack_kind_from_string(std::string_view name);

struct PoisonSpec {
  AttackKind attack = AttackKind::BadNet;
  double ratio = 0.1;
  int target = 0;
  std::uint64_t seed = 0;

  // BadNet: square patch anchored at the bottom-right corner.
  std::size_t patch_size = 3;
  float patch_value = 1.0f;

  // Blended: x' = (1 - blend) x + blend key. Without an explicit key a
  // uniform noise image is drawn from key_seed.
  double blend = 0.2;
  std::optional<Tensor> key;
  std::uint64_t key_seed = 0xB1E4D;

  // SIG: column-wise Delta sin(2 pi j f / w).
  double sig_delta = 20.0 / 255.0;
  int sig_frequency = 6;

  /// Throws SpecError when the parameters are invalid for `sample_shape`.
  void validate(const Shape& sample_shape, std::size_t classes) const;
};

/// Stamps the patch on floor(ratio * n) seeded samples and relabels them.
LabeledImageSet poison_badnet(const LabeledImageSet& set, const PoisonSpec& spec);

/// Blends the key into floor(ratio * n) seeded samples and relabels them.
LabeledImageSet poison_blended(const LabeledImageSet& set, const PoisonSpec& spec);

/// Clean-label attack: adds the sinusoid to floor(ratio * n_target) seeded
/// samples of the target class, leaving every label untouched.
LabeledImageSet poison_sig(const LabeledImageSet& set, const PoisonSpec& spec);

LabeledImageSet poison(const LabeledImageSet& set, const PoisonSpec& spec);

/// The key image used by the blended attack for images of `sample_shape`.
Tensor blend_key(const PoisonSpec& spec, const Shape& sample_shape);

/// Applies the trigger to every image of `images` [n x c x h x w] in place.
void apply_trigger(Tensor& images, const PoisonSpec& spec);

/// ASR evaluation set: clean samples whose label differs from the target,
/// with the trigger applied. Labels keep their true values.
LabeledImageSet triggered_eval_set(const LabeledImageSet& clean, const PoisonSpec& spec);

}  // namespace mergeguard::trojan
