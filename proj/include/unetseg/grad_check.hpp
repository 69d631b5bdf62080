#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "unetseg/tensor.hpp"

namespace unetseg {

struct GradCheckOptions {
  double h = 1e-6;
  double tolerance = 1e-4;
  /// Step is h * max(1, |x|) when set.
  bool scale_step = false;
  /// 0 checks every coordinate; otherwise a seeded sample per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  /// Also evaluates the central differences at h/2 and h/4. Where the estimates
  /// disagree beyond the tolerance the difference quotient itself is
  /// unreliable (a relu/max-pool kink inside the stencil, or roundoff
  /// swamping a tiny gradient); such coordinates are counted as
  /// inconclusive instead of being compared. A kink at the point itself
  /// leaves the central estimates equal, so the second differences are also
  /// required to scale like those of a smooth function.
  bool detect_kinks = false;
};

struct GradCheckReport {
  double max_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t inconclusive = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = true;

  std::string summary() const;
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of `f` with central differences
/// (f(x+h) - f(x-h)) / 2h. The error is relative, or absolute where the
/// analytic value is below 1e-6 in magnitude. Inputs are perturbed in place
/// and restored; they are marked as requiring gradients.
GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace unetseg
