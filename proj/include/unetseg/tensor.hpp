#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unetseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Tests verify in double; training runs in single.
enum class Precision { single, double_precision };

template <typename Real>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<Real, float> || std::is_same_v<Real, double>);
  return std::is_same_v<Real, float> ? Precision::single : Precision::double_precision;
}

template <typename Real>
class Tape;

namespace detail {

template <typename Real>
struct TensorStorage {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::optional<std::uint64_t> node_id;
  const Tape<Real>* tape = nullptr;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

}  // namespace detail

/// Dense row-major real array. Copies share storage; use clone() for a deep
/// copy. Canonical image layout is (batch, channel, height, width).
template <typename Real>
class Tensor {
 public:
  using value_type = Real;
  using Storage = detail::TensorStorage<Real>;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor scalar(Real value) { return Tensor(Shape{1}, {value}); }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<const Real> data() const { return s_->data; }
  /// Parameters and buffers are updated in place by optimizers and loaders.
  std::span<Real> mutable_data() { return s_->data; }
  Real item() const;
  Real at(std::size_t i) const { return s_->data.at(i); }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    s_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const Real> grad() const { return s_->grad; }
  std::span<Real> mutable_grad() {
    s_->ensure_grad();
    return s_->grad;
  }
  void zero_grad() { s_->grad.clear(); }

  std::optional<std::uint64_t> node_id() const { return s_->node_id; }

  /// Deep copy of shape and data; the copy is a fresh leaf without gradient.
  Tensor clone() const;

  const std::shared_ptr<Storage>& storage() const { return s_; }

 private:
  std::shared_ptr<Storage> s_;
};

/// Ordered record of differentiable operations. Nodes are appended as ops
/// run, so every node's inputs precede it.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t record(std::string_view op, std::initializer_list<const Tensor<Real>*> inputs,
                       Tensor<Real>& output, BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool contains(const Tensor<Real>& t) const;
  std::string_view op_at(std::size_t index) const { return nodes_.at(index).op; }
  const std::vector<std::uint64_t>& inputs_at(std::size_t index) const {
    return nodes_.at(index).inputs;
  }
  std::uint64_t id_at(std::size_t index) const { return nodes_.at(index).id; }

  /// Drops all nodes (and the intermediates they keep alive). Ids keep
  /// increasing so handles from a cleared recording never match again.
  void clear() { nodes_.clear(); }

  /// Reverse sweep from a scalar loss. Leaf gradients accumulate; gradients
  /// of recorded intermediates are reset at the start of every sweep.
  void backward(const Tensor<Real>& loss);

 private:
  struct Node {
    std::uint64_t id;
    std::string_view op;
    std::vector<std::uint64_t> inputs;
    std::shared_ptr<detail::TensorStorage<Real>> output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::uint64_t next_id_ = 0;
};

template <typename Real>
void backward(Tape<Real>& tape, const Tensor<Real>& loss) {
  tape.backward(loss);
}

/// Tape that ops on this thread record into, or nullptr.
template <typename Real>
Tape<Real>* active_tape() noexcept;

/// Makes `tape` the recording tape of the current thread while alive.
template <typename Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* previous_;
};

/// Suspends recording on the current thread (inference, restoring state).
template <typename Real>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<Real>* previous_;
};

namespace detail {

/// Returns the active tape if any input needs a gradient.
template <typename Real>
Tape<Real>* recording_tape(std::initializer_list<const Tensor<Real>*> inputs) {
  Tape<Real>* tape = active_tape<Real>();
  if (tape == nullptr) return nullptr;
  for (const Tensor<Real>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename Real>
void check_finite(const Tensor<Real>& t, std::string_view op);

}  // namespace detail

}  // namespace unetseg
