#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mergeguard/autodiff/linalg.hpp"
#include "mergeguard/autodiff/tape.hpp"

namespace mergeguard::ad {

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  auto out = linalg::matmul(av, bv);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  return tape.record(std::move(out), {a.index(), b.index()},
                     [ai = a.index(), bi = b.index(), m, k, n](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad_of(self);
                       if (t.requires_grad_at(ai)) {
                         // dA = G B^T
                         linalg::gemm<T>(false, true, m, k, n, g.data(), t.value_at(bi).data(),
                                         t.grad_of(ai).data(), true);
                       }
                       if (t.requires_grad_at(bi)) {
                         // dB = A^T G
                         linalg::gemm<T>(true, false, k, n, m, t.value_at(ai).data(), g.data(),
                                         t.grad_of(bi).data(), true);
                       }
                     });
}

/// Affine map of a fully connected layer: y = x W^T + b with x [batch x in],
/// W [out x in], b [out].
template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(weight);
  const auto& bv = tape.value(bias);
  require_rank(xv, 2, "linear input");
  require_rank(wv, 2, "linear weight");
  if (xv.dim(1) != wv.dim(1)) {
    throw DimensionError("linear: input width " + std::to_string(xv.dim(1)) +
                         " does not match weight " + shape_string(wv.shape()));
  }
  if (bv.size() != wv.dim(0)) {
    throw DimensionError("linear: bias length " + std::to_string(bv.size()) +
                         " does not match weight rows " + std::to_string(wv.dim(0)));
  }
  const std::size_t batch = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
  BasicTensor<T> y({batch, out});
  linalg::gemm<T>(false, true, batch, out, in, xv.data(), wv.data(), y.data(), false);
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < out; ++j) y(i, j) += bv[j];
  return tape.record(
      std::move(y), {x.index(), weight.index(), bias.index()},
      [xi = x.index(), wi = weight.index(), bi = bias.index(), batch, in, out](Tape<T>& t,
                                                                               std::size_t self) {
        const auto& g = t.grad_of(self);
        if (t.requires_grad_at(xi)) {
          linalg::gemm<T>(false, false, batch, in, out, g.data(), t.value_at(wi).data(),
                          t.grad_of(xi).data(), true);
        }
        if (t.requires_grad_at(wi)) {
          linalg::gemm<T>(true, false, out, in, batch, g.data(), t.value_at(xi).data(),
                          t.grad_of(wi).data(), true);
        }
        if (t.requires_grad_at(bi)) {
          auto& gb = t.grad_of(bi);
          for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t j = 0; j < out; ++j) gb[j] += g(i, j);
        }
      });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require_same_shape(av, bv, "add");
  BasicTensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.record(std::move(out), {a.index(), b.index()},
                     [ai = a.index(), bi = b.index()](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad_of(self);
                       for (std::size_t p : {ai, bi}) {
                         if (!t.requires_grad_at(p)) continue;
                         auto& gp = t.grad_of(p);
                         for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
                       }
                     });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require_same_shape(av, bv, "mul");
  BasicTensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.record(std::move(out), {a.index(), b.index()},
                     [ai = a.index(), bi = b.index()](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad_of(self);
                       if (t.requires_grad_at(ai)) {
                         auto& ga = t.grad_of(ai);
                         const auto& bv = t.value_at(bi);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                       }
                       if (t.requires_grad_at(bi)) {
                         auto& gb = t.grad_of(bi);
                         const auto& av = t.value_at(ai);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                       }
                     });
}

/// y = scale * a + shift, elementwise.
template <typename T>
Var affine(Tape<T>& tape, Var a, T scale, T shift) {
  BasicTensor<T> out = tape.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * out[i] + shift;
  return tape.record(std::move(out), {a.index()},
                     [ai = a.index(), scale](Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad_of(self);
                       auto& ga = t.grad_of(ai);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
                     });
}

template <typename T>
Var square(Tape<T>& tape, Var a) {
  BasicTensor<T> out = tape.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
  return tape.record(std::move(out), {a.index()}, [ai = a.index()](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& av = t.value_at(ai);
    auto& ga = t.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T{2} * av[i] * g[i];
  });
}

/// Sum of all elements as a rank-0 scalar.
template <typename T>
Var sum(Tape<T>& tape, Var a) {
  T s{0};
  for (T v : tape.value(a).data()) s += v;
  return tape.record(BasicTensor<T>::scalar(s), {a.index()},
                     [ai = a.index()](Tape<T>& t, std::size_t self) {
                       const T g = t.grad_of(self)[0];
                       auto& ga = t.grad_of(ai);
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
                     });
}

/// Logistic function 1 / (1 + exp(-a)), elementwise.
template <typename T>
Var logistic(Tape<T>& tape, Var a) {
  BasicTensor<T> out = tape.value(a);
  for (T& v : out.data()) v = T{1} / (T{1} + std::exp(-v));
  return tape.record(std::move(out), {a.index()}, [ai = a.index()](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& s = t.value_at(self);
    auto& ga = t.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (T{1} - s[i]);
  });
}

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  auto out = tape.value(a).reshaped(std::move(shape));
  return tape.record(std::move(out), {a.index()}, [ai = a.index()](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    auto& ga = t.grad_of(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

}  // namespace mergeguard::ad
