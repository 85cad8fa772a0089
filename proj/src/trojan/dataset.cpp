#include "mergeguard/trojan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mergeguard/autodiff/rng.hpp"
#include "mergeguard/nn/model.hpp"

namespace mergeguard::trojan {

std::size_t LabeledImageSet::poisoned_count() const {
  return static_cast<std::size_t>(std::count(poisoned.begin(), poisoned.end(), 1));
}

void LabeledImageSet::validate() const {
  require_rank(images, 4, "image set");
  if (images.dim(0) != labels.size() || poisoned.size() != labels.size()) {
    throw DataError("image set: " + std::to_string(images.dim(0)) + " images, " +
                    std::to_string(labels.size()) + " labels, " +
                    std::to_string(poisoned.size()) + " provenance flags");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("image set: label " + std::to_string(labels[i]) + " at index " +
                      std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  for (const float v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("image set: pixel outside [0, 1]");
  }
}

LabeledImageSet subset(const LabeledImageSet& set, std::span<const std::size_t> rows) {
  LabeledImageSet out;
  out.images = nn::gather_rows(set.images, rows);
  out.classes = set.classes;
  out.labels.reserve(rows.size());
  out.poisoned.reserve(rows.size());
  for (const std::size_t r : rows) {
    out.labels.push_back(set.labels.at(r));
    out.poisoned.push_back(set.poisoned.at(r));
  }
  return out;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw IngestionError(path.string() + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void expect_magic(const std::vector<unsigned char>& bytes, std::uint32_t expected,
                  const std::filesystem::path& path) {
  const std::uint32_t magic = read_be32(bytes, 0, path);
  if (magic != expected) {
    throw IngestionError(path.string() + ": bad magic " + hex32(magic) + " at offset 0, expected " +
                         hex32(expected));
  }
}

void expect_payload(const std::vector<unsigned char>& bytes, std::size_t header,
                    std::size_t payload, const std::filesystem::path& path) {
  if (bytes.size() < header + payload) {
    throw IngestionError(path.string() + ": truncated payload at offset " +
                         std::to_string(bytes.size()) + ", expected " +
                         std::to_string(header + payload) + " bytes");
  }
  if (bytes.size() > header + payload) {
    throw IngestionError(path.string() + ": " + std::to_string(bytes.size() - header - payload) +
                         " trailing bytes at offset " + std::to_string(header + payload));
  }
}

}  // namespace

LabeledImageSet load_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path, std::size_t classes) {
  const auto ib = read_file(images_path);
  const auto lb = read_file(labels_path);
  expect_magic(ib, 0x00000803u, images_path);
  expect_magic(lb, 0x00000801u, labels_path);
  const std::size_t n = read_be32(ib, 4, images_path);
  const std::size_t rows = read_be32(ib, 8, images_path);
  const std::size_t cols = read_be32(ib, 12, images_path);
  const std::size_t n_labels = read_be32(lb, 4, labels_path);
  if (n != n_labels) {
    throw IngestionError("count mismatch at offset 4: " + images_path.string() + " declares " +
                         std::to_string(n) + " images, " + labels_path.string() + " declares " +
                         std::to_string(n_labels) + " labels");
  }
  expect_payload(ib, 16, n * rows * cols, images_path);
  expect_payload(lb, 8, n, labels_path);

  LabeledImageSet set;
  set.images = Tensor({n, 1, rows, cols});
  auto px = set.images.data();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  set.labels.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    set.labels[i] = lb[8 + i];
    max_label = std::max(max_label, set.labels[i]);
  }
  set.poisoned.assign(n, 0);
  set.classes = classes != 0 ? classes : static_cast<std::size_t>(max_label + 1);
  if (static_cast<std::size_t>(max_label + 1) > set.classes) {
    throw IngestionError(labels_path.string() + ": label " + std::to_string(max_label) +
                         " exceeds class count " + std::to_string(set.classes));
  }
  return set;
}

namespace {

constexpr double kBgMean = 0.1;
constexpr double kBgStd = 0.05;

struct Canvas {
  std::size_t h, w;
  float* px;
  float intensity;

  // The bottom-right 4x4 corner is reserved for triggers.
  void set(long r, long c) {
    if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) return;
    if (r >= static_cast<long>(h) - 4 && c >= static_cast<long>(w) - 4) return;
    px[r * w + c] = intensity;
  }
};

void draw_shape(Canvas& cv, std::size_t kind, long cy, long cx, long s) {
  switch (kind) {
    case 0:  // horizontal bar
      for (long c = cx - s; c <= cx + s; ++c)
        for (long r = cy - 1; r <= cy; ++r) cv.set(r, c);
      break;
    case 1:  // vertical bar
      for (long r = cy - s; r <= cy + s; ++r)
        for (long c = cx - 1; c <= cx; ++c) cv.set(r, c);
      break;
    case 2:  // hollow square
      for (long t = -s; t <= s; ++t) {
        cv.set(cy - s, cx + t);
        cv.set(cy + s, cx + t);
        cv.set(cy + t, cx - s);
        cv.set(cy + t, cx + s);
      }
      break;
    case 3:  // plus
      for (long t = -s; t <= s; ++t) {
        cv.set(cy, cx + t);
        cv.set(cy + t, cx);
      }
      break;
    case 4: {  // ring
      const double rad = static_cast<double>(s);
      for (long r = cy - s - 1; r <= cy + s + 1; ++r)
        for (long c = cx - s - 1; c <= cx + s + 1; ++c) {
          const double d = std::hypot(static_cast<double>(r - cy), static_cast<double>(c - cx));
          if (std::abs(d - rad) < 0.6) cv.set(r, c);
        }
      break;
    }
    case 5:  // main diagonal
      for (long t = -s; t <= s; ++t) {
        cv.set(cy + t, cx + t);
        cv.set(cy + t, cx + t + 1);
      }
      break;
    case 6:  // X
      for (long t = -s; t <= s; ++t) {
        cv.set(cy + t, cx + t);
        cv.set(cy + t, cx - t);
      }
      break;
    case 7:  // filled square
      for (long r = cy - s + 1; r <= cy + s - 1; ++r)
        for (long c = cx - s + 1; c <= cx + s - 1; ++c) cv.set(r, c);
      break;
    case 8:  // anti-diagonal
      for (long t = -s; t <= s; ++t) {
        cv.set(cy + t, cx - t);
        cv.set(cy + t, cx - t + 1);
      }
      break;
    default:  // two horizontal bars
      for (long c = cx - s; c <= cx + s; ++c) {
        cv.set(cy - 2, c);
        cv.set(cy + 2, c);
      }
      break;
  }
}

}  // namespace

LabeledImageSet synth_shapes(std::size_t n, std::size_t classes, std::size_t h, std::size_t w,
                             std::uint64_t seed) {
  if (classes < 2 || classes > 10) {
    throw ContractError("synth_shapes: classes must lie in [2, 10], got " + std::to_string(classes));
  }
  if (h < 8 || w < 8) throw ContractError("synth_shapes: images must be at least 8x8");
  Rng rng(seed, 0x5A7E);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  rng.shuffle(labels.begin(), labels.end());

  LabeledImageSet set;
  set.images = Tensor({n, 1, h, w});
  set.labels = labels;
  set.poisoned.assign(n, 0);
  set.classes = classes;
  const long max_s = static_cast<long>(std::min(h, w)) / 4;  // 4 for 16x16
  for (std::size_t i = 0; i < n; ++i) {
    float* px = set.images.data().data() + i * h * w;
    for (std::size_t p = 0; p < h * w; ++p) {
      px[p] = static_cast<float>(std::clamp(kBgMean + kBgStd * rng.normal(), 0.0, 1.0));
    }
    const long s = 2 + static_cast<long>(rng.below(static_cast<std::uint64_t>(max_s - 1)));
    const long margin = s + 1;
    const long cy = margin + static_cast<long>(rng.below(static_cast<std::uint64_t>(
                                 std::max<long>(1, static_cast<long>(h) - 2 * margin))));
    const long cx = margin + static_cast<long>(rng.below(static_cast<std::uint64_t>(
                                 std::max<long>(1, static_cast<long>(w) - 2 * margin))));
    Canvas cv{h, w, px, static_cast<float>(rng.uniform(0.7, 1.0))};
    draw_shape(cv, static_cast<std::size_t>(labels[i]), cy, cx, s);
  }
  return set;
}

Split split_set(const LabeledImageSet& set, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ContractError("split_set: fraction must lie in [0, 1]");
  }
  Rng rng(seed, 0x5B11);
  const auto order = rng.permutation(set.size());
  const auto cut = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(set.size())));
  const std::span<const std::size_t> all(order);
  return {subset(set, all.first(cut)), subset(set, all.subspan(cut))};
}

}  // namespace mergeguard::trojan
