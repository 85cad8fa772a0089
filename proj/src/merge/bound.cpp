#include "mergeguard/merge/bound.hpp"

#include <algorithm>
#include <cmath>

#include "mergeguard/autodiff/linalg.hpp"

namespace mergeguard::merge {

namespace {

std::size_t sample_rows(const Tensor& samples) {
  if (samples.rank() == 0) throw DataError("bound: samples must be at least rank 1");
  return samples.dim(0);
}

std::vector<double> sample_norms(const Tensor& samples) {
  const std::size_t n = sample_rows(samples);
  const std::size_t d = n == 0 ? 0 : samples.size() / n;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = samples[i * d + j];
      s += v * v;
    }
    norms[i] = std::sqrt(s);
  }
  return norms;
}

}  // namespace

GapResult linearity_gap(const DenseBlock& block, std::span<const float> x) {
  const auto& l1 = block.first;
  const auto& l2 = block.second;
  if (x.size() != l1.in() || l1.out() != l2.in()) {
    throw DimensionError("linearity_gap: input or block shapes do not compose");
  }
  const double alpha = block.activation.alpha();
  const double beta = block.activation.beta;
  std::vector<double> pre(l1.out());
  for (std::size_t h = 0; h < l1.out(); ++h) {
    double acc = l1.bias[h];
    for (std::size_t j = 0; j < l1.in(); ++j) acc += static_cast<double>(l1.weight(h, j)) * x[j];
    pre[h] = acc;
  }
  GapResult result;
  result.gap.resize(l2.out());
  for (std::size_t o = 0; o < l2.out(); ++o) {
    double linear = l2.bias[o];
    double actual = l2.bias[o];
    for (std::size_t h = 0; h < l2.in(); ++h) {
      const double w = l2.weight(o, h);
      linear += w * pre[h];
      actual += w * nn::evaluate_activation<double>(block.activation.kind, pre[h], alpha, beta).value;
    }
    result.gap[o] = linear - actual;
    result.gap_sq += result.gap[o] * result.gap[o];
  }
  return result;
}

double quantile_radius(const Tensor& samples, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ContractError("quantile_radius: delta must lie in (0, 1)");
  auto norms = sample_norms(samples);
  if (norms.empty()) throw DataError("quantile_radius: no samples");
  std::sort(norms.begin(), norms.end());
  const double n = static_cast<double>(norms.size());
  const double allowed = delta * n + 1e-9;
  for (std::size_t i = 0; i < norms.size(); ++i) {
    // Elements strictly larger than norms[i] all sit after its last tie.
    const auto upper = std::upper_bound(norms.begin(), norms.end(), norms[i]);
    const auto larger = static_cast<double>(norms.end() - upper);
    if (larger <= allowed) return norms[i];
  }
  return norms.back();
}

double error_bound_C(const Tensor& w1, const Tensor& b1, const Tensor& w2, double x_delta) {
  require_rank(w1, 2, "error_bound_C W1");
  require_rank(w2, 2, "error_bound_C W2");
  if (w2.dim(1) != w1.dim(0) || b1.size() != w1.dim(0)) {
    throw DimensionError("error_bound_C: W1 " + shape_string(w1.shape()) + ", b1 " +
                         shape_string(b1.shape()) + ", W2 " + shape_string(w2.shape()) +
                         " do not compose");
  }
  const Tensor64 w2d = w2.cast<double>();
  const double sigma = linalg::sigma_max(linalg::matmul(w2d, w1.cast<double>()));
  std::vector<double> b(b1.data().begin(), b1.data().end());
  const double bias_norm = linalg::norm2(linalg::matvec(w2d, b));
  return sigma * sigma * x_delta * x_delta + bias_norm * bias_norm;
}

BoundReport audit_bound(const DenseBlock& block, const Tensor& samples, double delta) {
  const std::size_t n = sample_rows(samples);
  if (n < 100) {
    throw DataError("audit_bound: need at least 100 samples, got " + std::to_string(n));
  }
  const std::size_t d = samples.size() / n;
  BoundReport report;
  report.delta = delta;
  report.sample_count = n;
  report.alpha = block.activation.alpha();
  report.x_delta = quantile_radius(samples, delta);
  report.c = error_bound_C(block.first.weight, block.first.bias, block.second.weight,
                           report.x_delta);
  const double scale = (1.0 - report.alpha) * (1.0 - report.alpha);
  // Relative slack absorbs rounding when both sides are mathematically equal.
  const double threshold = report.c * scale * (1.0 + 1e-12);
  for (std::size_t i = 0; i < n; ++i) {
    const auto gap = linearity_gap(block, std::span<const float>(samples.data().data() + i * d, d));
    if (gap.gap_sq > threshold) ++report.violations;
  }
  report.empirical_violation_rate = static_cast<double>(report.violations) / static_cast<double>(n);
  return report;
}

}  // namespace mergeguard::merge
