#include "mergeguard/trojan/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mergeguard/autodiff/rng.hpp"

namespace mergeguard::trojan {

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::BadNet: return "badnet";
    case AttackKind::Blended: return "blended";
    case AttackKind::SIG: return "sig";
  }
  return "unknown";
}

AttackKind attack_kind_from_string(std::string_view name) {
  if (name == "badnet") return AttackKind::BadNet;
  if (name == "blended") return AttackKind::Blended;
  if (name == "sig") return AttackKind::SIG;
  throw SpecError("unknown attack '" + std::string(name) + "' (expected badnet, blended or sig)");
}

void PoisonSpec::validate(const Shape& sample_shape, std::size_t classes) const {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw SpecError("poison ratio must lie in [0, 1]");
  if (target < 0 || static_cast<std::size_t>(target) >= classes) {
    throw SpecError("target label " + std::to_string(target) + " outside [0, " +
                    std::to_string(classes) + ")");
  }
  if (sample_shape.size() != 3) throw SpecError("poisoning expects [c x h x w] samples");
  const std::size_t h = sample_shape[1], w = sample_shape[2];
  switch (attack) {
    case AttackKind::BadNet:
      if (patch_size == 0 || patch_size > h || patch_size > w) {
        throw SpecError("badnet patch " + std::to_string(patch_size) + "x" +
                        std::to_string(patch_size) + " does not fit a " + std::to_string(h) + "x" +
                        std::to_string(w) + " image");
      }
      if (!(patch_value >= 0.0f && patch_value <= 1.0f)) {
        throw SpecError("badnet patch value must lie in [0, 1]");
      }
      break;
    case AttackKind::Blended:
      if (!(blend >= 0.0 && blend <= 1.0)) throw SpecError("blend weight must lie in [0, 1]");
      if (key && key->shape() != sample_shape) {
        throw SpecError("blend key " + shape_string(key->shape()) + " does not match sample " +
                        shape_string(sample_shape));
      }
      break;
    case AttackKind::SIG:
      if (!(sig_delta >= 0.0 && sig_delta < 1.0)) throw SpecError("SIG amplitude must lie in [0, 1)");
      if (sig_frequency <= 0) throw SpecError("SIG frequency must be a positive integer");
      break;
  }
}

namespace {

std::size_t sample_size(const Tensor& images) { return images.size() / std::max<std::size_t>(images.dim(0), 1); }

void stamp_patch(float* img, const Shape& s, const PoisonSpec& spec) {
  const std::size_t c = s[0], h = s[1], w = s[2], p = spec.patch_size;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = h - p; r < h; ++r)
      for (std::size_t col = w - p; col < w; ++col) img[(ch * h + r) * w + col] = spec.patch_value;
}

void blend_into(float* img, const Tensor& key, double blend) {
  for (std::size_t i = 0; i < key.size(); ++i) {
    const double v = (1.0 - blend) * img[i] + blend * key[i];
    img[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
}

void add_sinusoid(float* img, const Shape& s, const PoisonSpec& spec) {
  const std::size_t c = s[0], h = s[1], w = s[2];
  for (std::size_t col = 0; col < w; ++col) {
    const double v = spec.sig_delta * std::sin(2.0 * std::numbers::pi * static_cast<double>(col) *
                                               spec.sig_frequency / static_cast<double>(w));
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < h; ++r) {
        float& px = img[(ch * h + r) * w + col];
        px = static_cast<float>(std::clamp(px + v, 0.0, 1.0));
      }
  }
}

// First floor(ratio * |candidates|) entries of a seeded shuffle.
std::vector<std::size_t> choose(std::vector<std::size_t> candidates, double ratio,
                                std::uint64_t seed) {
  Rng rng(seed, 0x9015);
  rng.shuffle(candidates.begin(), candidates.end());
  const auto count = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(candidates.size()) + 1e-9));
  candidates.resize(std::min(count, candidates.size()));
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

}  // namespace

Tensor blend_key(const PoisonSpec& spec, const Shape& sample_shape) {
  if (spec.key) return *spec.key;
  Tensor key(sample_shape);
  Rng rng(spec.key_seed, 0x6E7);
  for (float& v : key.data()) v = static_cast<float>(rng.uniform());
  return key;
}

LabeledImageSet poison_badnet(const LabeledImageSet& set, const PoisonSpec& spec) {
  spec.validate(set.sample_shape(), set.classes);
  LabeledImageSet out = set;
  const Shape s = set.sample_shape();
  const std::size_t stride = sample_size(set.images);
  for (const std::size_t i : choose(all_rows(set.size()), spec.ratio, spec.seed)) {
    stamp_patch(out.images.data().data() + i * stride, s, spec);
    out.labels[i] = spec.target;
    out.poisoned[i] = 1;
  }
  return out;
}

LabeledImageSet poison_blended(const LabeledImageSet& set, const PoisonSpec& spec) {
  spec.validate(set.sample_shape(), set.classes);
  LabeledImageSet out = set;
  const Tensor key = blend_key(spec, set.sample_shape());
  const std::size_t stride = sample_size(set.images);
  for (const std::size_t i : choose(all_rows(set.size()), spec.ratio, spec.seed)) {
    blend_into(out.images.data().data() + i * stride, key, spec.blend);
    out.labels[i] = spec.target;
    out.poisoned[i] = 1;
  }
  return out;
}

LabeledImageSet poison_sig(const LabeledImageSet& set, const PoisonSpec& spec) {
  spec.validate(set.sample_shape(), set.classes);
  LabeledImageSet out = set;
  std::vector<std::size_t> target_rows;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set.labels[i] == spec.target) target_rows.push_back(i);
  const Shape s = set.sample_shape();
  const std::size_t stride = sample_size(set.images);
  for (const std::size_t i : choose(std::move(target_rows), spec.ratio, spec.seed)) {
    add_sinusoid(out.images.data().data() + i * stride, s, spec);
    out.poisoned[i] = 1;
  }
  return out;
}

LabeledImageSet poison(const LabeledImageSet& set, const PoisonSpec& spec) {
  switch (spec.attack) {
    case AttackKind::BadNet: return poison_badnet(set, spec);
    case AttackKind::Blended: return poison_blended(set, spec);
    case AttackKind::SIG: return poison_sig(set, spec);
  }
  throw SpecError("unknown attack kind");
}

void apply_trigger(Tensor& images, const PoisonSpec& spec) {
  require_rank(images, 4, "apply_trigger");
  const Shape s{images.dim(1), images.dim(2), images.dim(3)};
  const std::size_t n = images.dim(0), stride = shape_size(s);
  const Tensor key = spec.attack == AttackKind::Blended ? blend_key(spec, s) : Tensor();
  for (std::size_t i = 0; i < n; ++i) {
    float* img = images.data().data() + i * stride;
    switch (spec.attack) {
      case AttackKind::BadNet: stamp_patch(img, s, spec); break;
      case AttackKind::Blended: blend_into(img, key, spec.blend); break;
      case AttackKind::SIG: add_sinusoid(img, s, spec); break;
    }
  }
}

LabeledImageSet triggered_eval_set(const LabeledImageSet& clean, const PoisonSpec& spec) {
  spec.validate(clean.sample_shape(), clean.classes);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < clean.size(); ++i)
    if (clean.labels[i] != spec.target) rows.push_back(i);
  LabeledImageSet out = subset(clean, rows);
  apply_trigger(out.images, spec);
  out.poisoned.assign(out.size(), 1);
  return out;
}

}  // namespace mergeguard::trojan
