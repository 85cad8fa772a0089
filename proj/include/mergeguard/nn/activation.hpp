#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "mergeguard/autodiff/tape.hpp"

namespace mergeguard::nn {

enum class ActivationKind { PReLU, ELU, GELU, SiLU };

std::string_view to_string(ActivationKind kind);
ActivationKind activation_kind_from_string(std::string_view name);

/// Maps an unconstrained raw coefficient into (0, 1).
template <typename T>
T clamp_alpha(T raw) {
  return T{1} / (T{1} + std::exp(-raw));
}

/// Inverse of clamp_alpha for alpha in (0, 1).
inline double alpha_logit(double alpha) { return std::log(alpha / (1.0 - alpha)); }

template <typename T>
T gaussian_cdf(T x) {
  return T{0.5} * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gaussian_pdf(T x) {
  return std::exp(T{-0.5} * x * x) / std::sqrt(T{2} * std::numbers::pi_v<T>);
}

template <typename T>
T logistic(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

// The four blended activations. Each reduces to its base form at alpha = 0
// and to the identity at alpha = 1.

template <typename T>
T prelu(T x, T alpha) {
  return std::max(T{0}, x) + alpha * std::min(T{0}, x);
}

template <typename T>
T elu_linearized(T x, T alpha, T beta) {
  if (x > T{0}) return x;
  return alpha * x + (T{1} - alpha) * beta * std::expm1(x);
}

template <typename T>
T gelu_linearized(T x, T alpha) {
  const T phi = gaussian_cdf(x);
  return x * (phi + alpha * (T{1} - phi));
}

template <typename T>
T silu_linearized(T x, T alpha) {
  const T s = logistic(x);
  return x * (s + alpha * (T{1} - s));
}

template <typename T>
struct ActivationEval {
  T value;
  T d_input;
  T d_alpha;
};

template <typename T>
ActivationEval<T> evaluate_activation(ActivationKind kind, T x, T alpha, T beta) {
  switch (kind) {
    case ActivationKind::PReLU:
      if (x > T{0}) return {x, T{1}, T{0}};
      return {alpha * x, alpha, x};
    case ActivationKind::ELU: {
      if (x > T{0}) return {x, T{1}, T{0}};
      const T em1 = std::expm1(x);
      return {alpha * x + (T{1} - alpha) * beta * em1, alpha + (T{1} - alpha) * beta * (em1 + T{1}),
              x - beta * em1};
    }
    case ActivationKind::GELU: {
      const T phi = gaussian_cdf(x);
      const T h = phi + alpha * (T{1} - phi);
      return {x * h, h + (T{1} - alpha) * x * gaussian_pdf(x), x * (T{1} - phi)};
    }
    case ActivationKind::SiLU: {
      const T s = logistic(x);
      const T h = s + alpha * (T{1} - s);
      return {x * h, h + (T{1} - alpha) * x * s * (T{1} - s), x * (T{1} - s)};
    }
  }
  return {x, T{1}, T{0}};
}

/// The activation at alpha = 0 (ReLU, ELU_beta, GeLU, SiLU).
template <typename T>
T base_activation(ActivationKind kind, T x, T beta) {
  switch (kind) {
    case ActivationKind::PReLU:
      return std::max(T{0}, x);
    case ActivationKind::ELU:
      return x > T{0} ? x : beta * std::expm1(x);
    case ActivationKind::GELU:
      return x * gaussian_cdf(x);
    case ActivationKind::SiLU:
      return x * logistic(x);
  }
  return x;
}

namespace ops {

/// Elementwise blended activation; `alpha` must be a one-element node.
template <typename T>
ad::Var activation(ad::Tape<T>& tape, ad::Var x, ad::Var alpha, ActivationKind kind, T beta) {
  const auto& xv = tape.value(x);
  const T a = tape.value(alpha).item();
  BasicTensor<T> y(xv.shape());
  BasicTensor<T> dx(xv.shape());
  BasicTensor<T> da(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const auto e = evaluate_activation(kind, xv[i], a, beta);
    y[i] = e.value;
    dx[i] = e.d_input;
    da[i] = e.d_alpha;
  }
  return tape.record(std::move(y), {x.index(), alpha.index()},
                     [xi = x.index(), ai = alpha.index(), dx = std::move(dx),
                      da = std::move(da)](ad::Tape<T>& t, std::size_t self) {
                       const auto& g = t.grad_of(self);
                       if (t.requires_grad_at(xi)) {
                         auto& gx = t.grad_of(xi);
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dx[i];
                       }
                       if (t.requires_grad_at(ai)) {
                         T acc{0};
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * da[i];
                         t.grad_of(ai)[0] += acc;
                       }
                     });
}

}  // namespace ops
}  // namespace mergeguard::nn
