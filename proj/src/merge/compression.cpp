#include "mergeguard/merge/compression.hpp"

#include <cstdint>
#include <string>

#include "mergeguard/errors.hpp"

namespace mergeguard::merge {

namespace {

void require_positive(std::size_t v, const char* name) {
  if (v == 0) throw ContractError(std::string("compression spec: ") + name + " must be positive");
}

// Both counts are exact integers, so (original - fused) / original rounds
// once and matches the closed-form value to the last bit.
double ratio(std::int64_t original, std::int64_t fused) {
  return static_cast<double>(original - fused) / static_cast<double>(original);
}

}  // namespace

double compression_ratio_dense(const DenseDims& d) {
  require_positive(d.n_in, "n_in");
  require_positive(d.n_hidden, "n_hidden");
  require_positive(d.n_out, "n_out");
  const auto original = static_cast<std::int64_t>(d.n_hidden * (d.n_in + d.n_out));
  const auto fused = static_cast<std::int64_t>(d.n_in * d.n_out);
  return ratio(original, fused);
}

double compression_ratio_conv(const ConvDims& d) {
  require_positive(d.k1, "k1");
  require_positive(d.k2, "k2");
  require_positive(d.c_in, "c_in");
  require_positive(d.c_hidden, "c_hidden");
  require_positive(d.c_out, "c_out");
  const std::size_t k = d.k1 + d.k2 - 1;
  const auto original =
      static_cast<std::int64_t>(d.k1 * d.k1 * d.c_in * d.c_hidden + d.k2 * d.k2 * d.c_hidden * d.c_out);
  const auto fused = static_cast<std::int64_t>(k * k * d.c_in * d.c_out);
  // Normalized by the fused kernel count, unlike the dense ratio: a 1x1 pair
  // scores -1 even though fusing it halves the weights. See
  // MergeRecord::weight_reduction for the measured ratio.
  return static_cast<double>(fused - original) / static_cast<double>(fused);
}

double compression_ratio(const CompressionSpec& spec) {
  if (const auto* d = std::get_if<DenseDims>(&spec)) return compression_ratio_dense(*d);
  return compression_ratio_conv(std::get<ConvDims>(spec));
}

}  // namespace mergeguard::merge
