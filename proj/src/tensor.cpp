#include "unetseg/tensor.hpp"

#include <cmath>
#include <sstream>

#include "unetseg/error.hpp"

namespace unetseg {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill) : s_(std::make_shared<Storage>()) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  s_->data.assign(shape_numel(shape), fill);
  s_->shape = std::move(shape);
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> values) : s_(std::make_shared<Storage>()) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  s_->shape = std::move(shape);
  s_->data = std::move(values);
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape()));
  return s_->data[0];
}

template <typename Real>
Tensor<Real> Tensor<Real>::clone() const {
  return Tensor(s_->shape, s_->data);
}

template <typename Real>
std::uint64_t Tape<Real>::record(std::string_view op,
                                 std::initializer_list<const Tensor<Real>*> inputs,
                                 Tensor<Real>& output, BackwardFn fn) {
  Node node;
  node.id = next_id_++;
  node.op = op;
  for (const Tensor<Real>* in : inputs) {
    if (in != nullptr && in->defined() && contains(*in)) node.inputs.push_back(*in->node_id());
  }
  output.storage()->requires_grad = true;
  output.storage()->node_id = node.id;
  output.storage()->tape = this;
  node.output = output.storage();
  node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return nodes_.back().id;
}

template <typename Real>
bool Tape<Real>::contains(const Tensor<Real>& t) const {
  const auto& s = t.storage();
  if (!s || s->tape != this || !s->node_id || nodes_.empty()) return false;
  const std::uint64_t id = *s->node_id;
  return id >= nodes_.front().id && id <= nodes_.back().id;
}

template <typename Real>
void Tape<Real>::backward(const Tensor<Real>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (!contains(loss)) throw ContractError("backward: loss was not recorded on this tape");

  for (Node& node : nodes_) node.output->grad.assign(node.output->data.size(), Real(0));
  loss.storage()->grad[0] = Real(1);

  const std::uint64_t loss_id = *loss.node_id();
  const std::size_t last = static_cast<std::size_t>(loss_id - nodes_.front().id);
  for (std::size_t i = last + 1; i-- > 0;) nodes_[i].backward();
}

namespace {

template <typename Real>
Tape<Real>*& tape_slot() noexcept {
  thread_local Tape<Real>* slot = nullptr;
  return slot;
}

}  // namespace

template <typename Real>
Tape<Real>* active_tape() noexcept {
  return tape_slot<Real>();
}

template <typename Real>
TapeScope<Real>::TapeScope(Tape<Real>& tape) : previous_(tape_slot<Real>()) {
  tape_slot<Real>() = &tape;
}

template <typename Real>
TapeScope<Real>::~TapeScope() {
  tape_slot<Real>() = previous_;
}

template <typename Real>
NoGradScope<Real>::NoGradScope() : previous_(tape_slot<Real>()) {
  tape_slot<Real>() = nullptr;
}

template <typename Real>
NoGradScope<Real>::~NoGradScope() {
  tape_slot<Real>() = previous_;
}

namespace detail {

template <typename Real>
void check_finite([[maybe_unused]] const Tensor<Real>& t, [[maybe_unused]] std::string_view op) {
#ifndef NDEBUG
  for (Real v : t.data()) {
    if (!std::isfinite(v)) {
      throw TrainingError("non-finite value produced by " + std::string(op));
    }
  }
#endif
}

template void check_finite(const Tensor<float>&, std::string_view);
template void check_finite(const Tensor<double>&, std::string_view);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;
template Tape<float>* active_tape<float>() noexcept;
template Tape<double>* active_tape<double>() noexcept;

}  // namespace unetseg
