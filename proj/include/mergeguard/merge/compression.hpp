#pragma once

#include <cstddef>
#include <variant>

namespace mergeguard::merge {

struct DenseDims {
  std::size_t n_in = 0;
  std::size_t n_hidden = 0;
  std::size_t n_out = 0;
};

struct ConvDims {
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  std::size_t c_in = 0;
  std::size_t c_hidden = 0;
  std::size_t c_out = 0;
};

using CompressionSpec = std::variant<DenseDims, ConvDims>;

/// 1 - n_in n_out / (n_hidden (n_in + n_out)); weight counts only. Negative
/// values mean the fused layer is larger than the pair it replaces.
double compression_ratio_dense(const DenseDims& dims);

/// 1 - (k1^2 c_in c_hidden + k2^2 c_hidden c_out) / ((k1 + k2 - 1)^2 c_in c_out).
double compression_ratio_conv(const ConvDims& dims);

double compression_ratio(const CompressionSpec& spec);

}  // namespace mergeguard::merge
