#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "unetseg/ops.hpp"
#include "unetseg/tensor.hpp"

namespace unetseg::nn {

using Mode = ops::BatchNormMode;

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  std::size_t group = 0;
  bool batch_norm = false;
  bool trainable = true;
};

/// Non-trainable state saved with the model (batch-norm running statistics).
template <typename Real>
struct Buffer {
  std::string name;
  Tensor<Real> value;
  std::size_t group = 0;
};

struct LayerGroup {
  std::string name;
  bool trainable = true;
};

enum class FreezePolicy { freeze_first_group, unfreeze_all_except_batchnorm, unfreeze_all };

FreezePolicy parse_freeze_policy(std::string_view text);
std::string_view to_string(FreezePolicy policy);

using Rng = std::mt19937_64;

template <typename Real>
class Registry;

template <typename Real>
class Conv2d {
 public:
  Conv2d() = default;
  /// He-normal weights (std sqrt(2 / fan_in)); bias, when present, starts at 0.
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t padding, bool with_bias, Rng& rng);

  Tensor<Real> forward(const Tensor<Real>& x) const;
  void register_in(Registry<Real>& registry, const std::string& prefix, std::size_t group);

  Tensor<Real> weight;
  Tensor<Real> bias;
  ops::Conv2dOptions options;
};

template <typename Real>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, ops::BatchNormOptions options = {});

  /// A frozen layer normalizes with its running statistics in every mode.
  Tensor<Real> forward(const Tensor<Real>& x, Mode mode);
  void register_in(Registry<Real>& registry, const std::string& prefix, std::size_t group);

  Tensor<Real> gamma;
  Tensor<Real> beta;
  ops::BatchNormState<Real> state;
  ops::BatchNormOptions options;
  bool frozen = false;
};

/// conv3x3 -> batch norm -> relu
template <typename Real>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
             std::size_t stride, Rng& rng, ops::BatchNormOptions bn = {});

  Tensor<Real> forward(const Tensor<Real>& x, Mode mode);
  void register_in(Registry<Real>& registry, const std::string& prefix, std::size_t group);

  Conv2d<Real> conv;
  BatchNorm2d<Real> bn;
};

/// y = relu(F(x) + shortcut(x)), F = bn2(conv2(relu(bn1(conv1(x))))). The
/// shortcut is the identity, or a 1x1 conv + batch norm when the channel
/// count or stride changes.
template <typename Real>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(std::size_t in_channels, std::size_t out_channels, std::size_t stride, Rng& rng,
                ops::BatchNormOptions bn = {});

  Tensor<Real> forward(const Tensor<Real>& x, Mode mode);
  void register_in(Registry<Real>& registry, const std::string& prefix, std::size_t group);

  std::size_t in_channels() const { return conv1.weight.dim(1); }
  std::size_t out_channels() const { return conv2.weight.dim(0); }
  bool has_projection() const { return projection.has_value(); }

  Conv2d<Real> conv1;
  BatchNorm2d<Real> bn1;
  Conv2d<Real> conv2;
  BatchNorm2d<Real> bn2;
  std::optional<Conv2d<Real>> projection;
  std::optional<BatchNorm2d<Real>> projection_bn;
};

/// Named parameters, buffers and layer groups of one model. Holds pointers to
/// the batch-norm layers it freezes, so the owning model must not move.
template <typename Real>
class Registry {
 public:
  std::size_t add_group(std::string name);
  void add_parameter(std::string name, Tensor<Real> value, std::size_t group, bool batch_norm);
  void add_buffer(std::string name, Tensor<Real> value, std::size_t group);
  void add_batch_norm(BatchNorm2d<Real>* layer, std::size_t group);

  std::vector<Parameter<Real>>& parameters() { return parameters_; }
  const std::vector<Parameter<Real>>& parameters() const { return parameters_; }
  const std::vector<Buffer<Real>>& buffers() const { return buffers_; }
  const std::vector<LayerGroup>& groups() const { return groups_; }
  std::size_t group_index(std::string_view name) const;

  void set_trainable(FreezePolicy policy);
  void set_group_trainable(std::string_view name, bool trainable);

  void zero_grad();

 private:
  void refresh();

  std::vector<Parameter<Real>> parameters_;
  std::vector<Buffer<Real>> buffers_;
  std::vector<LayerGroup> groups_;
  std::vector<std::pair<BatchNorm2d<Real>*, std::size_t>> batch_norms_;
  bool batch_norm_pinned_ = false;
};

template <typename Real>
void set_trainable(Registry<Real>& registry, FreezePolicy policy) {
  registry.set_trainable(policy);
}

}  // namespace unetseg::nn
