#pragma once

#include <cstdint>
#include <vector>

#include "unetseg/layers.hpp"

namespace unetseg {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments mirror the parameter list they were created for.
template <typename Real>
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(const std::vector<nn::Parameter<Real>>& params, AdamOptions opts = {});
};

/// One bias-corrected Adam update at learning rate `lr`. Only trainable
/// parameters (and their moments) change; a missing gradient counts as zero.
/// Any non-finite gradient raises TrainingError before anything is updated.
template <typename Real>
void adam_step(std::vector<nn::Parameter<Real>>& params, AdamState<Real>& state, double lr);

}  // namespace unetseg
