#include "mergeguard/merge/fuse.hpp"

#include <algorithm>

#include "mergeguard/autodiff/linalg.hpp"
#include "mergeguard/merge/compression.hpp"

namespace mergeguard::merge {

nn::DenseLayer merge_dense(const DenseBlock& block) {
  const auto& l1 = block.first;
  const auto& l2 = block.second;
  try {
    l1.validate();
    l2.validate();
  } catch (const DimensionError& e) {
    throw MergeError(std::string("merge_dense: ") + e.what());
  }
  if (l1.out() != l2.in()) {
    throw MergeError("merge_dense: first layer emits " + std::to_string(l1.out()) +
                     " features, second expects " + std::to_string(l2.in()));
  }
  const Tensor64 w1 = l1.weight.cast<double>();
  const Tensor64 w2 = l2.weight.cast<double>();
  const Tensor64 w = linalg::matmul(w2, w1);
  Tensor64 b = l2.bias.cast<double>();
  for (std::size_t i = 0; i < l2.out(); ++i)
    for (std::size_t h = 0; h < l2.in(); ++h) b[i] += w2(i, h) * static_cast<double>(l1.bias[h]);
  return {w.cast<float>(), b.cast<float>()};
}

nn::Conv2dLayer merge_conv(const ConvBlock& block) {
  const auto& l1 = block.first;
  const auto& l2 = block.second;
  try {
    l1.validate();
    l2.validate();
  } catch (const DimensionError& e) {
    throw MergeError(std::string("merge_conv: ") + e.what());
  }
  if (l1.stride != 1 || l2.stride != 1) {
    throw UnsupportedMergeError("merge_conv: only stride-1 convolutions can be merged (got " +
                                std::to_string(l1.stride) + ", " + std::to_string(l2.stride) +
                                ")");
  }
  if (l2.padding != 0) {
    throw UnsupportedMergeError("merge_conv: second convolution must be unpadded (padding " +
                                std::to_string(l2.padding) + ")");
  }
  if (l1.c_out() != l2.c_in()) {
    throw MergeError("merge_conv: hidden channel mismatch " + std::to_string(l1.c_out()) +
                     " vs " + std::to_string(l2.c_in()));
  }
  const std::size_t k1 = l1.kernel_size(), k2 = l2.kernel_size(), k = k1 + k2 - 1;
  const std::size_t c_in = l1.c_in(), c_hidden = l1.c_out(), c_out = l2.c_out();
  Tensor64 kernel({c_out, c_in, k, k});
  Tensor64 bias = l2.bias.cast<double>();
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t h = 0; h < c_hidden; ++h) {
      const float* k2p = l2.kernel.data().data() + ((o * c_hidden + h) * k2) * k2;
      double tap_sum = 0.0;
      for (std::size_t i = 0; i < k2 * k2; ++i) tap_sum += k2p[i];
      bias[o] += tap_sum * static_cast<double>(l1.bias[h]);
      for (std::size_t c = 0; c < c_in; ++c) {
        const float* k1p = l1.kernel.data().data() + ((h * c_in + c) * k1) * k1;
        double* out = kernel.data().data() + ((o * c_in + c) * k) * k;
        for (std::size_t v1 = 0; v1 < k2; ++v1)
          for (std::size_t v2 = 0; v2 < k2; ++v2) {
            const double a = k2p[v1 * k2 + v2];
            if (a == 0.0) continue;
            for (std::size_t u1 = 0; u1 < k1; ++u1)
              for (std::size_t u2 = 0; u2 < k1; ++u2)
                out[(v1 + u1) * k + (v2 + u2)] += a * k1p[u1 * k1 + u2];
          }
      }
    }
  }
  return {kernel.cast<float>(), bias.cast<float>(), 1, l1.padding + l2.padding};
}

std::vector<bool> snap_alphas(nn::Model& model, std::span<const MergeableBlock> blocks,
                              double threshold) {
  std::vector<bool> snapped;
  for (const auto& b : blocks) {
    if (!is_mergeable_at(model, b.position)) {
      throw MergeError("no mergeable block at layer " + std::to_string(b.position));
    }
    auto& act = std::get<nn::ParametricActivation>(model.layer(b.position + 1));
    const bool snap = act.alpha() >= threshold;
    if (snap) act = nn::ParametricActivation::pinned(act.kind, 1.0f, act.beta);
    snapped.push_back(snap);
  }
  return snapped;
}

MergeRecord fuse_block(nn::Model& model, const MergeableBlock& block) {
  MergeRecord rec;
  rec.position = block.position;
  rec.family = block.family;
  if (block.family == BlockFamily::Dense) {
    const DenseBlock db = dense_block(model, block);
    rec.alpha = db.activation.alpha();
    if (db.activation.trainable || db.activation.fixed_alpha != 1.0f) {
      throw MergeError("fuse_block: activation at layer " + std::to_string(block.position + 1) +
                       " is not pinned to the identity");
    }
    nn::DenseLayer fused = merge_dense(db);
    rec.weights_block = db.first.weight.size() + db.second.weight.size();
    rec.params_block = rec.weights_block + db.first.bias.size() + db.second.bias.size();
    rec.weights_fused = fused.weight.size();
    rec.params_fused = fused.weight.size() + fused.bias.size();
    rec.compression_ratio =
        compression_ratio_dense({db.first.in(), db.first.out(), db.second.out()});
    model.replace(block.position, 3, std::move(fused));
  } else {
    const ConvBlock cb = conv_block(model, block);
    rec.alpha = cb.activation.alpha();
    if (cb.activation.trainable || cb.activation.fixed_alpha != 1.0f) {
      throw MergeError("fuse_block: activation at layer " + std::to_string(block.position + 1) +
                       " is not pinned to the identity");
    }
    nn::Conv2dLayer fused = merge_conv(cb);
    rec.weights_block = cb.first.kernel.size() + cb.second.kernel.size();
    rec.params_block = rec.weights_block + cb.first.bias.size() + cb.second.bias.size();
    rec.weights_fused = fused.kernel.size();
    rec.params_fused = fused.kernel.size() + fused.bias.size();
    rec.kernel_size = fused.kernel_size();
    rec.compression_ratio =
        compression_ratio_conv({cb.first.kernel_size(), cb.second.kernel_size(), cb.first.c_in(),
                                cb.first.c_out(), cb.second.c_out()});
    model.replace(block.position, 3, std::move(fused));
  }
  // Same single-rounding form as the closed-form ratio.
  rec.weight_reduction = (static_cast<double>(rec.weights_block) - static_cast<double>(rec.weights_fused)) /
                         static_cast<double>(rec.weights_block);
  rec.merged = true;
  return rec;
}

std::vector<MergeRecord> finalize_merge(nn::Model& model, std::span<const MergeableBlock> blocks,
                                        double threshold) {
  std::vector<MergeableBlock> ordered(blocks.begin(), blocks.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.position < b.position; });
  std::vector<MergeRecord> records(ordered.size());
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    records[i].position = ordered[i].position;
    records[i].family = ordered[i].family;
    if (!is_mergeable_at(model, ordered[i].position)) {
      throw MergeError("no mergeable block at layer " + std::to_string(ordered[i].position));
    }
    records[i].alpha =
        std::get<nn::ParametricActivation>(model.layer(ordered[i].position + 1)).alpha();
  }
  const auto snapped = snap_alphas(model, ordered, threshold);
  // Fuse deepest first so earlier positions stay valid.
  for (std::size_t i = ordered.size(); i-- > 0;) {
    if (!snapped[i]) continue;
    const double alpha = records[i].alpha;
    records[i] = fuse_block(model, ordered[i]);
    records[i].alpha = alpha;
  }
  return records;
}

}  // namespace mergeguard::merge
