#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mergeguard/autodiff/tensor.hpp"

namespace mergeguard::trojan {

/// Images [n x c x h x w] with pixels in [0, 1], one label and one
/// provenance flag per image.
struct LabeledImageSet {
  Tensor images = Tensor(Shape{0, 1, 1, 1});
  std::vector<int> labels;
  std::vector<std::uint8_t> poisoned;  // 1 = altered by an attack
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  Shape sample_shape() const { return {channels(), height(), width()}; }
  std::size_t poisoned_count() const;

  /// Throws DataError unless shapes agree, labels < classes and pixels lie
  /// in [0, 1].
  void validate() const;

  friend bool operator==(const LabeledImageSet&, const LabeledImageSet&) = default;
};

LabeledImageSet subset(const LabeledImageSet& set, std::span<const std::size_t> rows);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Bytes map to [0, 1] by division by 255. `classes` = 0 infers max label + 1.
LabeledImageSet load_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path, std::size_t classes = 0);

/// Deterministic grayscale shapes: one shape family per class (bars,
/// squares, crosses, circles, diagonals), with jittered position and size,
/// random intensity and background noise. Shapes never touch the 4x4
/// bottom-right corner. Class counts differ by at most one.
LabeledImageSet synth_shapes(std::size_t n, std::size_t classes, std::size_t h, std::size_t w,
                             std::uint64_t seed);

struct Split {
  LabeledImageSet first;
  LabeledImageSet second;
};

/// Seeded random partition; `first` receives round(fraction * n) samples.
Split split_set(const LabeledImageSet& set, double fraction, std::uint64_t seed);

}  // namespace mergeguard::trojan
