#pragma once

#include <string_view>

#include "unetseg/tensor.hpp"

namespace unetseg {

enum class LossKind { bce_with_logits, soft_jaccard };

LossKind parse_loss_kind(std::string_view text);
std::string_view to_string(LossKind kind);

/// Mean over all elements of max(z,0) - t*z + log(1 + exp(-|z|)).
/// Targets must be exactly 0 or 1.
template <typename Real>
Tensor<Real> bce_with_logits(const Tensor<Real>& logits, const Tensor<Real>& targets);

/// 1 - (I + smooth) / (U + smooth) with p = sigmoid(z), I = sum p*t,
/// U = sum p + sum t - I.
template <typename Real>
Tensor<Real> soft_jaccard_loss(const Tensor<Real>& logits, const Tensor<Real>& targets,
                               double smooth = 1.0);

template <typename Real>
Tensor<Real> segmentation_loss(LossKind kind, const Tensor<Real>& logits,
                               const Tensor<Real>& targets) {
  return kind == LossKind::soft_jaccard ? soft_jaccard_loss(logits, targets)
                                        : bce_with_logits(logits, targets);
}

}  // namespace unetseg
