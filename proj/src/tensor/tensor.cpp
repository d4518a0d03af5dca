#include "crossgaze/tensor/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace crossgaze {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename T>
Tensor<T>::Tensor() : Tensor(Shape{}) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<TensorNode<T>>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  node_->data.assign(shape_numel(shape), T{0});
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(node_->shape));
  }
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->data.size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " + shape_string(node_->shape));
  }
  return node_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::grad_buffer() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T{0});
  return node_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node_->shape, node_->data, node_->requires_grad);
}

namespace {
template <typename T>
thread_local Tape<T>* active_tape = nullptr;
}  // namespace

template <typename T>
Tape<T>::Scope::Scope(Tape& tape) : previous_(active_tape<T>) {
  active_tape<T> = &tape;
}

template <typename T>
Tape<T>::Scope::~Scope() {
  active_tape<T> = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_tape<T>;
}

template <typename T>
std::size_t Tape<T>::record(std::string kind, std::vector<std::optional<std::size_t>> inputs,
                            std::shared_ptr<TensorNode<T>> output, std::function<void()> backward) {
  if (consumed_) throw std::logic_error("tape already consumed by backward(); clear() it first");
  const std::size_t id = nodes_.size();
  output->tape_id = id;
  nodes_.push_back(Node{std::move(kind), std::move(inputs), std::move(output), std::move(backward)});
  return id;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  const auto id = loss.tape_id();
  if (!id || *id >= nodes_.size() || nodes_[*id].output != loss.node()) {
    throw std::logic_error("loss is not recorded on this tape");
  }
  if (consumed_) throw std::logic_error("tape already consumed by backward(); clear() it first");
  consumed_ = true;

  Tensor<T> seed = loss;
  seed.grad_buffer()[0] += T{1};
  for (std::size_t i = *id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.output->grad.empty()) continue;  // not on a path to the loss
    n.backward();
  }
}

template <typename T>
void Tape<T>::clear() {
  for (auto& n : nodes_) n.output->tape_id.reset();
  nodes_.clear();
  consumed_ = false;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace crossgaze
