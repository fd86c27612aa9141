#pragma once

#include <span>
#include <string>
#include <vector>

#include "mse/diffmath/ops.hpp"

namespace mse::trainer {

using diffmath::Tensor;

/// Summed next-token cross-entropy of the label tokens. The token at input
/// position p is predicted from logits row p - 1; every other row contributes
/// nothing.
inline Tensor label_loss(const Tensor& logits, std::span<const std::size_t> label_positions,
                         std::span<const int> label_ids) {
  if (label_positions.empty()) throw InputError("label loss needs at least one label token");
  if (label_positions.size() != label_ids.size()) {
    throw DimensionError("label positions (" + std::to_string(label_positions.size()) + ") and ids (" +
                         std::to_string(label_ids.size()) + ") differ in length");
  }
  std::vector<std::size_t> rows(label_positions.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t p = label_positions[k];
    if (p == 0 || p > logits.rows()) {
      throw IndexError("label position " + std::to_string(p) + " has no predicting row in " +
                       diffmath::shape_str(logits.shape()));
    }
    rows[k] = p - 1;
  }
  return diffmath::cross_entropy_rows(logits, rows, label_ids);
}

}  // namespace mse::trainer
