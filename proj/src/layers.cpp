#include "unetseg/layers.hpp"

#include <cmath>

#include "unetseg/error.hpp"

namespace unetseg::nn {

FreezePolicy parse_freeze_policy(std::string_view text) {
  if (text == "freeze_first_group") return FreezePolicy::freeze_first_group;
  if (text == "unfreeze_all_except_batchnorm") return FreezePolicy::unfreeze_all_except_batchnorm;
  if (text == "unfreeze_all") return FreezePolicy::unfreeze_all;
  throw ConfigError("unknown freeze policy '" + std::string(text) + "'");
}

std::string_view to_string(FreezePolicy policy) {
  switch (policy) {
    case FreezePolicy::freeze_first_group:
      return "freeze_first_group";
    case FreezePolicy::unfreeze_all_except_batchnorm:
      return "unfreeze_all_except_batchnorm";
    case FreezePolicy::unfreeze_all:
      return "unfreeze_all";
  }
  return "?";
}

template <typename Real>
Conv2d<Real>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                     std::size_t stride, std::size_t padding, bool with_bias, Rng& rng)
    : weight(Shape{out_channels, in_channels, kernel, kernel}), options{stride, padding} {
  const double fan_in = static_cast<double>(in_channels * kernel * kernel);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (Real& w : weight.mutable_data()) w = static_cast<Real>(normal(rng));
  weight.set_requires_grad(true);
  if (with_bias) {
    bias = Tensor<Real>(Shape{out_channels}, Real(0));
    bias.set_requires_grad(true);
  }
}

template <typename Real>
Tensor<Real> Conv2d<Real>::forward(const Tensor<Real>& x) const {
  return ops::conv2d(x, weight, bias, options);
}

template <typename Real>
void Conv2d<Real>::register_in(Registry<Real>& registry, const std::string& prefix,
                               std::size_t group) {
  registry.add_parameter(prefix + ".weight", weight, group, false);
  if (bias.defined()) registry.add_parameter(prefix + ".bias", bias, group, false);
}

template <typename Real>
BatchNorm2d<Real>::BatchNorm2d(std::size_t channels, ops::BatchNormOptions opts)
    : gamma(Shape{channels}, Real(1)),
      beta(Shape{channels}, Real(0)),
      state(channels),
      options(opts) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

template <typename Real>
Tensor<Real> BatchNorm2d<Real>::forward(const Tensor<Real>& x, Mode mode) {
  return ops::batch_norm2d(x, gamma, beta, state, frozen ? Mode::eval : mode, options);
}

template <typename Real>
void BatchNorm2d<Real>::register_in(Registry<Real>& registry, const std::string& prefix,
                                    std::size_t group) {
  registry.add_parameter(prefix + ".gamma", gamma, group, true);
  registry.add_parameter(prefix + ".beta", beta, group, true);
  registry.add_buffer(prefix + ".running_mean", state.running_mean, group);
  registry.add_buffer(prefix + ".running_var", state.running_var, group);
  registry.add_batch_norm(this, group);
}

template <typename Real>
ConvBnRelu<Real>::ConvBnRelu(std::size_t in_channels, std::size_t out_channels,
                             std::size_t kernel, std::size_t stride, Rng& rng,
                             ops::BatchNormOptions bn_options)
    : conv(in_channels, out_channels, kernel, stride, kernel / 2, false, rng),
      bn(out_channels, bn_options) {}

template <typename Real>
Tensor<Real> ConvBnRelu<Real>::forward(const Tensor<Real>& x, Mode mode) {
  return ops::relu(bn.forward(conv.forward(x), mode));
}

template <typename Real>
void ConvBnRelu<Real>::register_in(Registry<Real>& registry, const std::string& prefix,
                                   std::size_t group) {
  conv.register_in(registry, prefix + ".conv", group);
  bn.register_in(registry, prefix + ".bn", group);
}

template <typename Real>
ResidualBlock<Real>::ResidualBlock(std::size_t in_channels, std::size_t out_channels,
                                   std::size_t stride, Rng& rng, ops::BatchNormOptions bn)
    : conv1(in_channels, out_channels, 3, stride, 1, false, rng),
      bn1(out_channels, bn),
      conv2(out_channels, out_channels, 3, 1, 1, false, rng),
      bn2(out_channels, bn) {
  if (in_channels != out_channels || stride != 1) {
    projection.emplace(in_channels, out_channels, 1, stride, 0, false, rng);
    projection_bn.emplace(out_channels, bn);
  }
}

template <typename Real>
Tensor<Real> ResidualBlock<Real>::forward(const Tensor<Real>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != in_channels()) {
    throw ShapeError("residual block expects " + std::to_string(in_channels()) +
                     " input channels, got " + shape_string(x.shape()));
  }
  Tensor<Real> f = ops::relu(bn1.forward(conv1.forward(x), mode));
  f = bn2.forward(conv2.forward(f), mode);
  const Tensor<Real> shortcut =
      projection ? projection_bn->forward(projection->forward(x), mode) : x;
  if (shortcut.shape() != f.shape()) {
    throw ShapeError("residual block: shortcut " + shape_string(shortcut.shape()) +
                     " does not match residual path " + shape_string(f.shape()));
  }
  return ops::relu(ops::add(f, shortcut));
}

template <typename Real>
void ResidualBlock<Real>::register_in(Registry<Real>& registry, const std::string& prefix,
                                      std::size_t group) {
  conv1.register_in(registry, prefix + ".conv1", group);
  bn1.register_in(registry, prefix + ".bn1", group);
  conv2.register_in(registry, prefix + ".conv2", group);
  bn2.register_in(registry, prefix + ".bn2", group);
  if (projection) {
    projection->register_in(registry, prefix + ".proj", group);
    projection_bn->register_in(registry, prefix + ".proj_bn", group);
  }
}

template <typename Real>
std::size_t Registry<Real>::add_group(std::string name) {
  groups_.push_back(LayerGroup{std::move(name), true});
  return groups_.size() - 1;
}

template <typename Real>
void Registry<Real>::add_parameter(std::string name, Tensor<Real> value, std::size_t group,
                                   bool batch_norm) {
  parameters_.push_back(Parameter<Real>{std::move(name), std::move(value), group, batch_norm, true});
  refresh();
}

template <typename Real>
void Registry<Real>::add_buffer(std::string name, Tensor<Real> value, std::size_t group) {
  buffers_.push_back(Buffer<Real>{std::move(name), std::move(value), group});
}

template <typename Real>
void Registry<Real>::add_batch_norm(BatchNorm2d<Real>* layer, std::size_t group) {
  batch_norms_.emplace_back(layer, group);
  refresh();
}

template <typename Real>
std::size_t Registry<Real>::group_index(std::string_view name) const {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    if (groups_[i].name == name) return i;
  }
  throw ConfigError("unknown layer group '" + std::string(name) + "'");
}

template <typename Real>
void Registry<Real>::set_trainable(FreezePolicy policy) {
  for (std::size_t i = 0; i < groups_.size(); ++i) {
    groups_[i].trainable = !(policy == FreezePolicy::freeze_first_group && i == 0);
  }
  batch_norm_pinned_ = policy == FreezePolicy::unfreeze_all_except_batchnorm;
  refresh();
}

template <typename Real>
void Registry<Real>::set_group_trainable(std::string_view name, bool trainable) {
  groups_[group_index(name)].trainable = trainable;
  refresh();
}

template <typename Real>
void Registry<Real>::zero_grad() {
  for (auto& p : parameters_) p.value.zero_grad();
}

template <typename Real>
void Registry<Real>::refresh() {
  for (auto& p : parameters_) {
    p.trainable = groups_.at(p.group).trainable && !(p.batch_norm && batch_norm_pinned_);
    p.value.set_requires_grad(p.trainable);
  }
  for (auto& [layer, group] : batch_norms_) {
    layer->frozen = !groups_.at(group).trainable || batch_norm_pinned_;
  }
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBnRelu<float>;
template class ConvBnRelu<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Registry<float>;
template class Registry<double>;

}  // namespace unetseg::nn
