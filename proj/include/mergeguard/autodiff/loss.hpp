#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "mergeguard/autodiff/tape.hpp"

namespace mergeguard::ad {

/// Row-wise softmax with max subtraction.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& logits) {
  require_rank(logits, 2, "softmax_rows");
  BasicTensor<T> p = logits;
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  for (std::size_t i = 0; i < rows; ++i) {
    T* row = p.data().data() + i * cols;
    const T mx = *std::max_element(row, row + cols);
    T z{0};
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= z;
  }
  return p;
}

inline void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) {
    throw DataError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                    std::to_string(batch));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                      std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
  const auto& lv = tape.value(logits);
  require_rank(lv, 2, "cross_entropy logits");
  const std::size_t batch = lv.dim(0), classes = lv.dim(1);
  check_labels(labels, batch, classes);
  if (batch == 0) throw DataError("cross_entropy: empty batch");

  BasicTensor<T> probs = softmax_rows(lv);
  T total{0};
  for (std::size_t i = 0; i < batch; ++i) {
    const T* row = lv.data().data() + i * classes;
    const T mx = *std::max_element(row, row + classes);
    T z{0};
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
    total += (std::log(z) + mx) - row[labels[i]];
  }
  std::vector<int> owned(labels.begin(), labels.end());
  return tape.record(BasicTensor<T>::scalar(total / static_cast<T>(batch)), {logits.index()},
                     [li = logits.index(), probs = std::move(probs), owned = std::move(owned),
                      batch, classes](Tape<T>& t, std::size_t self) {
                       const T g = t.grad_of(self)[0] / static_cast<T>(batch);
                       auto& gl = t.grad_of(li);
                       for (std::size_t i = 0; i < batch; ++i) {
                         for (std::size_t j = 0; j < classes; ++j) {
                           const T onehot = static_cast<std::size_t>(owned[i]) == j ? T{1} : T{0};
                           gl[i * classes + j] += g * (probs[i * classes + j] - onehot);
                         }
                       }
                     });
}

}  // namespace mergeguard::ad
