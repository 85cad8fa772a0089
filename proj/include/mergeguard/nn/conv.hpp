#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "mergeguard/autodiff/tape.hpp"

namespace mergeguard::nn {

struct ConvGeometry {
  std::size_t batch, c_in, h, w;
  std::size_t c_out, k;
  std::size_t stride, padding;
  std::size_t h_out, w_out;
};

/// Output spatial extent of a convolution; throws when the window does not
/// tile the padded input exactly.
inline std::size_t conv_output_extent(std::size_t extent, std::size_t k, std::size_t stride,
                                      std::size_t padding) {
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t padded = extent + 2 * padding;
  if (padded < k) {
    throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                         std::to_string(padded));
  }
  if ((padded - k) % stride != 0) {
    throw DimensionError("conv2d: output size (" + std::to_string(extent) + "+2*" +
                         std::to_string(padding) + "-" + std::to_string(k) + ")/" +
                         std::to_string(stride) + "+1 is not an integer");
  }
  return (padded - k) / stride + 1;
}

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                           std::size_t stride, std::size_t padding) {
  require_rank(x, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (kernel.dim(2) != kernel.dim(3)) throw DimensionError("conv2d: kernels must be square");
  if (x.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(x.dim(1)) +
                         " channels, kernel expects " + std::to_string(kernel.dim(1)));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2),
                 stride,   padding,  0,        0};
  g.h_out = conv_output_extent(g.h, g.k, stride, padding);
  g.w_out = conv_output_extent(g.w, g.k, stride, padding);
  return g;
}

/// Cross-correlation over NCHW input with zero padding.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                              const BasicTensor<T>& bias, std::size_t stride,
                              std::size_t padding) {
  const ConvGeometry g = conv_geometry(x, kernel, stride, padding);
  if (bias.size() != g.c_out) throw DimensionError("conv2d: bias length mismatch");
  BasicTensor<T> y({g.batch, g.c_out, g.h_out, g.w_out});
  const long pad = static_cast<long>(padding);
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t o = 0; o < g.c_out; ++o) {
      T* out = y.data().data() + ((n * g.c_out + o) * g.h_out) * g.w_out;
      for (std::size_t i = 0; i < g.h_out * g.w_out; ++i) out[i] = bias[o];
      for (std::size_t c = 0; c < g.c_in; ++c) {
        const T* in = x.data().data() + ((n * g.c_in + c) * g.h) * g.w;
        const T* ker = kernel.data().data() + ((o * g.c_in + c) * g.k) * g.k;
        for (std::size_t u = 0; u < g.k; ++u) {
          for (std::size_t v = 0; v < g.k; ++v) {
            const T kv = ker[u * g.k + v];
            for (std::size_t i = 0; i < g.h_out; ++i) {
              const long r = static_cast<long>(i * stride + u) - pad;
              if (r < 0 || r >= static_cast<long>(g.h)) continue;
              const T* in_row = in + r * static_cast<long>(g.w);
              T* out_row = out + i * g.w_out;
              for (std::size_t j = 0; j < g.w_out; ++j) {
                const long col = static_cast<long>(j * stride + v) - pad;
                if (col < 0 || col >= static_cast<long>(g.w)) continue;
                out_row[j] += kv * in_row[col];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

namespace ops {

template <typename T>
ad::Var conv2d(ad::Tape<T>& tape, ad::Var x, ad::Var kernel, ad::Var bias, std::size_t stride,
               std::size_t padding) {
  const auto& xv = tape.value(x);
  const auto& kv = tape.value(kernel);
  const ConvGeometry g = conv_geometry(xv, kv, stride, padding);
  auto y = conv2d_forward(xv, kv, tape.value(bias), stride, padding);
  return tape.record(
      std::move(y), {x.index(), kernel.index(), bias.index()},
      [xi = x.index(), ki = kernel.index(), bi = bias.index(), g](ad::Tape<T>& t,
                                                                  std::size_t self) {
        const auto& gy = t.grad_of(self);
        const auto& xv = t.value_at(xi);
        const auto& kv = t.value_at(ki);
        const bool want_x = t.requires_grad_at(xi);
        const bool want_k = t.requires_grad_at(ki);
        const long pad = static_cast<long>(g.padding);
        if (t.requires_grad_at(bi)) {
          auto& gb = t.grad_of(bi);
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t o = 0; o < g.c_out; ++o) {
              const T* go = gy.data().data() + ((n * g.c_out + o) * g.h_out) * g.w_out;
              T acc{0};
              for (std::size_t i = 0; i < g.h_out * g.w_out; ++i) acc += go[i];
              gb[o] += acc;
            }
        }
        if (!want_x && !want_k) return;
        T* gx = want_x ? t.grad_of(xi).data().data() : nullptr;
        T* gk = want_k ? t.grad_of(ki).data().data() : nullptr;
        for (std::size_t n = 0; n < g.batch; ++n) {
          for (std::size_t o = 0; o < g.c_out; ++o) {
            const T* go = gy.data().data() + ((n * g.c_out + o) * g.h_out) * g.w_out;
            for (std::size_t c = 0; c < g.c_in; ++c) {
              const std::size_t in_off = ((n * g.c_in + c) * g.h) * g.w;
              const std::size_t k_off = ((o * g.c_in + c) * g.k) * g.k;
              for (std::size_t u = 0; u < g.k; ++u) {
                for (std::size_t v = 0; v < g.k; ++v) {
                  const T kval = kv[k_off + u * g.k + v];
                  T kacc{0};
                  for (std::size_t i = 0; i < g.h_out; ++i) {
                    const long r = static_cast<long>(i * g.stride + u) - pad;
                    if (r < 0 || r >= static_cast<long>(g.h)) continue;
                    for (std::size_t j = 0; j < g.w_out; ++j) {
                      const long col = static_cast<long>(j * g.stride + v) - pad;
                      if (col < 0 || col >= static_cast<long>(g.w)) continue;
                      const std::size_t xidx = in_off + static_cast<std::size_t>(r) * g.w +
                                               static_cast<std::size_t>(col);
                      const T gval = go[i * g.w_out + j];
                      if (gk) kacc += gval * xv[xidx];
                      if (gx) gx[xidx] += gval * kval;
                    }
                  }
                  if (gk) gk[k_off + u * g.k + v] += kacc;
                }
              }
            }
          }
        }
      });
}

/// Non-overlapping max pooling with window = stride = `size`; trailing rows
/// and columns that do not fill a window are dropped.
template <typename T>
ad::Var maxpool2d(ad::Tape<T>& tape, ad::Var x, std::size_t size) {
  const auto& xv = tape.value(x);
  require_rank(xv, 4, "maxpool2d input");
  if (size == 0) throw DimensionError("maxpool2d: window must be positive");
  const std::size_t batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t ho = h / size, wo = w / size;
  if (ho == 0 || wo == 0) throw DimensionError("maxpool2d: window larger than input");
  BasicTensor<T> y({batch, ch, ho, wo});
  std::vector<std::size_t> argmax(y.size());
  for (std::size_t nc = 0; nc < batch * ch; ++nc) {
    const T* in = xv.data().data() + nc * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (i * size) * w + j * size;
        for (std::size_t u = 0; u < size; ++u)
          for (std::size_t v = 0; v < size; ++v) {
            const std::size_t idx = (i * size + u) * w + j * size + v;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (nc * ho + i) * wo + j;
        y[o] = in[best];
        argmax[o] = nc * h * w + best;
      }
    }
  }
  return tape.record(std::move(y), {x.index()},
                     [xi = x.index(), argmax = std::move(argmax)](ad::Tape<T>& t,
                                                                  std::size_t self) {
                       const auto& g = t.grad_of(self);
                       auto& gx = t.grad_of(xi);
                       for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
                     });
}

}  // namespace ops
}  // namespace mergeguard::nn
