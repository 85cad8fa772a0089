#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mergeguard/merge/blocks.hpp"

namespace mergeguard::merge {

struct GapResult {
  std::vector<double> gap;  // Y_linear - Y_alpha
  double gap_sq = 0.0;      // squared Euclidean norm of gap
};

/// Difference between the fused (linear) output and the actual block
/// output for one input vector, evaluated in double. It equals
/// (1 - alpha) W2 min(0, W1 x + b1) for PReLU blocks.
GapResult linearity_gap(const DenseBlock& block, std::span<const float> x);

/// Smallest sample norm r such that at most a delta fraction of the sample
/// norms exceed r. `samples` is [n x d] (or [n] for scalar samples).
double quantile_radius(const Tensor& samples, double delta);

/// C = sigma_max(W2 W1)^2 x_delta^2 + |W2 b1|^2.
double error_bound_C(const Tensor& w1, const Tensor& b1, const Tensor& w2, double x_delta);

struct BoundReport {
  double delta = 0.0;
  double x_delta = 0.0;
  double c = 0.0;
  double alpha = 0.0;
  double empirical_violation_rate = 0.0;
  std::size_t sample_count = 0;
  std::size_t violations = 0;

  friend bool operator==(const BoundReport&, const BoundReport&) = default;
};

/// Counts samples where |Y_linear - Y_alpha|^2 > C (1 - alpha)^2, with x_delta
/// estimated from the same samples. Requires at least 100 samples. The
/// bound is reported, not asserted.
BoundReport audit_bound(const DenseBlock& block, const Tensor& samples, double delta);

}  // namespace mergeguard::merge
