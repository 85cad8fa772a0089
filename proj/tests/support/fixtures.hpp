#pragma once

#include "mergeguard/merge/blocks.hpp"
#include "support/oracles.hpp"

namespace mergeguard::testing {

inline nn::DenseLayer random_dense(std::size_t in, std::size_t out, Rng& rng, bool zero_bias = false) {
  nn::DenseLayer d;
  d.weight = random_tensor({out, in}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  d.bias = zero_bias ? Tensor({out}) : random_tensor({out}, rng, 0.5);
  return d;
}

inline merge::DenseBlock random_dense_block(std::size_t in, std::size_t hidden, std::size_t out,
                                            Rng& rng, float alpha,
                                            nn::ActivationKind kind = nn::ActivationKind::PReLU,
                                            bool zero_bias = false) {
  return {random_dense(in, hidden, rng, zero_bias), nn::ParametricActivation::pinned(kind, alpha),
          random_dense(hidden, out, rng, zero_bias)};
}

inline nn::Conv2dLayer random_conv(std::size_t c_in, std::size_t c_out, std::size_t k,
                                   std::size_t padding, Rng& rng) {
  nn::Conv2dLayer c;
  c.kernel = random_tensor({c_out, c_in, k, k}, rng, 1.0 / std::sqrt(static_cast<double>(c_in * k * k)));
  c.bias = random_tensor({c_out}, rng, 0.5);
  c.stride = 1;
  c.padding = padding;
  return c;
}

inline merge::ConvBlock random_conv_block(std::size_t c_in, std::size_t c_hidden,
                                          std::size_t c_out, std::size_t k1, std::size_t k2,
                                          std::size_t p1, Rng& rng, float alpha) {
  return {random_conv(c_in, c_hidden, k1, p1, rng),
          nn::ParametricActivation::pinned(nn::ActivationKind::PReLU, alpha),
          random_conv(c_hidden, c_out, k2, 0, rng)};
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace mergeguard::testing
