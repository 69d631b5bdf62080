#include "unetseg/optim.hpp"

#include <cmath>

#include "unetseg/error.hpp"

namespace unetseg {

template <typename Real>
AdamState<Real>::AdamState(const std::vector<nn::Parameter<Real>>& params, AdamOptions opts)
    : options(opts) {
  for (const auto& p : params) {
    m.emplace_back(p.value.numel(), Real(0));
    v.emplace_back(p.value.numel(), Real(0));
  }
}

template <typename Real>
void adam_step(std::vector<nn::Parameter<Real>>& params, AdamState<Real>& state, double lr) {
  if (state.m.size() != params.size()) {
    throw ContractError("adam state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ContractError("adam learning rate must be finite and non-negative");
  }
  for (const auto& p : params) {
    if (!p.trainable || !p.value.has_grad()) continue;
    for (Real g : p.value.grad()) {
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter " + p.name);
    }
  }

  ++state.step;
  const double b1 = state.options.beta1, b2 = state.options.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    if (state.m[i].size() != p.value.numel()) {
      throw ContractError("adam moment shape mismatch for " + p.name);
    }
    const bool has_grad = p.value.has_grad();
    auto values = p.value.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = has_grad ? static_cast<double>(p.value.grad()[j]) : 0.0;
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      const double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + state.options.eps);
      values[j] = static_cast<Real>(values[j] - update);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::vector<nn::Parameter<float>>&, AdamState<float>&, double);
template void adam_step(std::vector<nn::Parameter<double>>&, AdamState<double>&, double);

}  // namespace unetseg
