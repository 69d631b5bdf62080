#pragma once

#include <cstddef>

#include "unetseg/tensor.hpp"

namespace unetseg::ops {

/// Elementwise sum. `b` may also be a channel vector broadcast over a
/// rank-4 `a`; its gradient is then summed over batch and spatial axes.
template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

/// Sum of all elements, as a one-element tensor.
template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a);

/// max(0, x); the subgradient at exactly 0 is 0.
template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a);

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a);

/// Numerically stable scalar logistic function.
template <typename Real>
Real stable_sigmoid(Real x);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

/// Cross-correlation of an NCHW input with an O x C x k x k weight (zero
/// padding). `bias` may be undefined.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& weight,
                    const Tensor<Real>& bias, Conv2dOptions options = {});

/// Non-overlapping k x k max pooling. Ties route the gradient to the first
/// element of the window in row-major order.
template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& input, std::size_t k = 2);

template <typename Real>
Tensor<Real> upsample_nearest2x(const Tensor<Real>& input);

/// Channel concatenation; `a`'s channels come first.
template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b);

enum class BatchNormMode { train, eval };

template <typename Real>
struct BatchNormState {
  Tensor<Real> running_mean;
  Tensor<Real> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Shape{channels == 0 ? 1 : channels}, Real(0)),
        running_var(Shape{channels == 0 ? 1 : channels}, Real(1)) {}
};

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
  /// When false, train mode normalizes by batch statistics but leaves the
  /// running statistics untouched.
  bool update_running_stats = true;
};

/// Train mode normalizes with the biased batch variance and folds the
/// unbiased variance into the running estimate; eval mode uses the running
/// statistics.
template <typename Real>
Tensor<Real> batch_norm2d(const Tensor<Real>& input, const Tensor<Real>& gamma,
                          const Tensor<Real>& beta, BatchNormState<Real>& state,
                          BatchNormMode mode, BatchNormOptions options = {});

}  // namespace unetseg::ops
