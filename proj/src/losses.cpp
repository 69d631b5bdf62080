#include "unetseg/losses.hpp"

#include <cmath>

#include "unetseg/error.hpp"
#include "unetseg/ops.hpp"

namespace unetseg {
namespace {

template <typename Real>
void check_targets(const Tensor<Real>& logits, const Tensor<Real>& targets, const char* op) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError(std::string(op) + ": logits " + shape_string(logits.shape()) +
                     " and targets " + shape_string(targets.shape()) + " differ");
  }
  for (Real t : targets.data()) {
    if (t != Real(0) && t != Real(1)) {
      throw ContractError(std::string(op) + ": target value " + std::to_string(t) +
                          " is not 0 or 1");
    }
  }
}

}  // namespace

LossKind parse_loss_kind(std::string_view text) {
  if (text == "bce" || text == "bce_with_logits") return LossKind::bce_with_logits;
  if (text == "soft_jaccard") return LossKind::soft_jaccard;
  throw ConfigError("unknown loss '" + std::string(text) + "' (bce|soft_jaccard)");
}

std::string_view to_string(LossKind kind) {
  return kind == LossKind::soft_jaccard ? "soft_jaccard" : "bce";
}

template <typename Real>
Tensor<Real> bce_with_logits(const Tensor<Real>& logits, const Tensor<Real>& targets) {
  check_targets(logits, targets, "bce_with_logits");
  const std::size_t n = logits.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.data()[i];
    const double t = targets.data()[i];
    total += std::max(z, 0.0) - t * z + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor<Real> result = Tensor<Real>::scalar(static_cast<Real>(total / static_cast<double>(n)));
  if (Tape<Real>* tape = detail::recording_tape<Real>({&logits})) {
    auto sz = logits.storage(), st = targets.storage(), so = result.storage();
    tape->record("bce_with_logits", {&logits}, result, [sz, st, so, n] {
      if (!sz->requires_grad) return;
      sz->ensure_grad();
      const Real scale = so->grad[0] / static_cast<Real>(n);
      for (std::size_t i = 0; i < n; ++i) {
        sz->grad[i] += (ops::stable_sigmoid(sz->data[i]) - st->data[i]) * scale;
      }
    });
  }
  return result;
}

template <typename Real>
Tensor<Real> soft_jaccard_loss(const Tensor<Real>& logits, const Tensor<Real>& targets,
                               double smooth) {
  check_targets(logits, targets, "soft_jaccard_loss");
  const std::size_t n = logits.numel();
  std::vector<double> p(n);
  double inter = 0.0, sum_p = 0.0, sum_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = ops::stable_sigmoid(static_cast<double>(logits.data()[i]));
    const double t = targets.data()[i];
    inter += p[i] * t;
    sum_p += p[i];
    sum_t += t;
  }
  const double uni = sum_p + sum_t - inter;
  const double loss = 1.0 - (inter + smooth) / (uni + smooth);
  Tensor<Real> result = Tensor<Real>::scalar(static_cast<Real>(loss));
  if (Tape<Real>* tape = detail::recording_tape<Real>({&logits})) {
    auto sz = logits.storage(), st = targets.storage(), so = result.storage();
    tape->record("soft_jaccard_loss", {&logits}, result,
                 [sz, st, so, p = std::move(p), inter, uni, smooth] {
      if (!sz->requires_grad) return;
      sz->ensure_grad();
      const double num = inter + smooth, den = uni + smooth;
      const double upstream = so->grad[0];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double t = st->data[i];
        // dI/dp = t, dU/dp = 1 - t
        const double dl_dp = -(t * den - num * (1.0 - t)) / (den * den);
        sz->grad[i] += static_cast<Real>(upstream * dl_dp * p[i] * (1.0 - p[i]));
      }
    });
  }
  return result;
}

template Tensor<float> bce_with_logits(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> bce_with_logits(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> soft_jaccard_loss(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> soft_jaccard_loss(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace unetseg
