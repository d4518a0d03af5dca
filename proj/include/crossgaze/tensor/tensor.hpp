#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crossgaze/tensor/errors.hpp"

namespace crossgaze {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class Tape;

/// Shared storage behind a Tensor handle. Row-major, dense, no strides.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::optional<std::size_t> tape_id;
};

/// Reference-semantics handle to a dense tensor. Copies share storage, which
/// is what lets the tape hand gradients back to parameters held elsewhere.
/// Use clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T& operator[](std::size_t i) { return node_->data[i]; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  /// Value of a single-element tensor.
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  /// Gradient buffer, allocated (zero-filled) on first access.
  std::span<T> grad_buffer() const;
  void zero_grad() { node_->grad.clear(); }

  std::optional<std::size_t> tape_id() const { return node_->tape_id; }

  /// Independent deep copy of the values, detached from any tape.
  Tensor clone() const;
  template <typename U>
  Tensor<U> cast() const;

  bool shares_storage(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> converted(node_->data.begin(), node_->data.end());
  return Tensor<U>(node_->shape, std::move(converted), node_->requires_grad);
}

/// Ordered record of differentiable operations. Node order is creation order,
/// so inputs always precede the nodes that consume them and a reverse sweep is
/// a valid reverse topological order.
///
/// Operations record into the tape installed on the current thread by a
/// Tape::Scope, and only when at least one input requires a gradient.
template <typename T>
class Tape {
 public:
  struct Node {
    std::string kind;
    std::vector<std::optional<std::size_t>> inputs;  // tape ids; nullopt for leaves
    std::shared_ptr<TensorNode<T>> output;
    std::function<void()> backward;
  };

  /// Installs a tape as the recording target for this thread.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  bool consumed() const { return consumed_; }

  std::size_t record(std::string kind, std::vector<std::optional<std::size_t>> inputs,
                     std::shared_ptr<TensorNode<T>> output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse, accumulating
  /// gradients into every reachable tensor that requires one.
  void backward(const Tensor<T>& loss);

  /// Drops all nodes and the intermediates they keep alive.
  void clear();

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace crossgaze
