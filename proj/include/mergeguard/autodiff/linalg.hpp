#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mergeguard/autodiff/rng.hpp"
#include "mergeguard/autodiff/tensor.hpp"

namespace mergeguard::linalg {

// C[m x n] (+)= op(A) * op(B), where op transposes when the flag is set.
// A is stored as [m x k] (or [k x m] if trans_a), B as [k x n] (or [n x k]).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.end(), T{0});
  if (!trans_b) {
    // i-p-j ordering streams rows of B and C.
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        if (av == T{0}) continue;
        const T* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      T acc{0};
      if (trans_a) {
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
      } else {
        const T* arow = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      }
      c[i * n + j] += acc;
    }
  }
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  BasicTensor<T> c({a.dim(0), b.dim(1)});
  gemm<T>(false, false, a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), c.data(), false);
  return c;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank(a, 2, "transpose");
  BasicTensor<T> t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) t(j, i) = a(i, j);
  return t;
}

/// y = M x for a rank-2 M and a vector x of length cols(M).
template <typename T>
std::vector<double> matvec(const BasicTensor<T>& m, std::span<const double> x) {
  std::vector<double> y(m.dim(0), 0.0);
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.dim(1); ++j) acc += static_cast<double>(m(i, j)) * x[j];
    y[i] = acc;
  }
  return y;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct PowerIterationOptions {
  double relative_tolerance = 1e-6;
  std::size_t max_iterations = 1000;
};

/// Largest singular value by power iteration on M^T M, accumulated in double.
/// Returns 0 for an all-zero matrix.
template <typename T>
double sigma_max(const BasicTensor<T>& m, PowerIterationOptions options = {}) {
  require_rank(m, 2, "sigma_max");
  const std::size_t cols = m.dim(1);
  if (m.size() == 0) return 0.0;
  for (const T& v : m.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw ContractError("sigma_max: non-finite entry");
  }

  // Fixed start vector keeps the result a pure function of M.
  Rng rng(0x5167A3A7ULL);
  std::vector<double> v(cols);
  for (double& x : v) x = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  double nv = norm2(v);
  for (double& x : v) x /= nv;

  double sigma = 0.0;
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    const std::vector<double> mv = matvec(m, v);
    const double next = norm2(mv);  // ||M v|| with unit v
    if (next == 0.0) return 0.0;
    std::vector<double> w(cols, 0.0);
    for (std::size_t i = 0; i < m.dim(0); ++i)
      for (std::size_t j = 0; j < cols; ++j) w[j] += static_cast<double>(m(i, j)) * mv[i];
    const double nw = norm2(w);
    if (nw == 0.0) return next;
    for (std::size_t j = 0; j < cols; ++j) v[j] = w[j] / nw;
    const bool converged = std::abs(next - sigma) <= options.relative_tolerance * next;
    sigma = next;
    if (converged) break;
  }
  // Final Rayleigh estimate from the converged direction.
  return norm2(matvec(m, v));
}

}  // namespace mergeguard::linalg
