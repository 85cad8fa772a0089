#pragma once

// Independent reference implementations used only by tests. None of these
// share code with the library paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "mergeguard/autodiff/rng.hpp"
#include "mergeguard/autodiff/tensor.hpp"

namespace mergeguard::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

inline Tensor64 random_tensor64(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor64 t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

template <typename T>
std::vector<double> naive_matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p)
        c[i * n + j] += static_cast<double>(a[i * k + p]) * static_cast<double>(b[p * n + j]);
  return c;
}

// Cross-correlation, NCHW input, OIHW kernel, zero padding.
template <typename T>
std::vector<double> naive_conv(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                               const BasicTensor<T>& bias, std::size_t stride,
                               std::size_t padding, std::size_t& h_out, std::size_t& w_out) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = kernel.dim(0), k = kernel.dim(2);
  h_out = (h + 2 * padding - k) / stride + 1;
  w_out = (w + 2 * padding - k) / stride + 1;
  std::vector<double> y(n * co * h_out * w_out, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < h_out; ++i)
        for (std::size_t j = 0; j < w_out; ++j) {
          double acc = bias[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(padding);
                const long s = static_cast<long>(j * stride + v) - static_cast<long>(padding);
                if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(w)) continue;
                acc += static_cast<double>(x[((b * ci + c) * h + r) * w + s]) *
                       static_cast<double>(kernel[((o * ci + c) * k + u) * k + v]);
              }
          y[((b * co + o) * h_out + i) * w_out + j] = acc;
        }
  return y;
}

// Central differences of a scalar function of one f64 tensor.
inline Tensor64 numeric_gradient(const std::function<double(const Tensor64&)>& f, Tensor64 at,
                                 double step = 1e-3) {
  Tensor64 g(at.shape());
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double keep = at[i];
    at[i] = keep + step;
    const double up = f(at);
    at[i] = keep - step;
    const double down = f(at);
    at[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||, floor); robust when both are tiny.
inline double relative_error(const Tensor64& a, const Tensor64& b, double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace mergeguard::testing
