#pragma once

#include <cstddef>
#include <vector>

#include "crossgaze/tensor/tensor.hpp"

// Differentiable tensor operations. Each op returns a fresh tensor and, when a
// Tape::Scope is active and some input requires a gradient, records exactly
// one tape node.

namespace crossgaze {

enum class BinaryOp { add, sub, mul, div };
enum class ReduceOp { sum, mean, max };
enum class Activation { relu, gelu };

/// a (op) b, where b has a's shape, or is broadcastable into it: right-aligned,
/// each of b's dims either equal to a's or 1 (a single-element b is a scalar).
template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, T b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::add, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::sub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::mul, a, b); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::div, a, b); }

/// [M,K]x[K,N], [B,M,K]x[B,K,N], [B,M,K]x[K,N] or [M,K]x[B,K,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x [B,C,H,W] * w [O,C,kh,kw] -> [B,O,H',W'] with zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, Conv2dOptions options = {});

/// Reduces over `axes` (removed from the shape unless keep_dims). Max routes
/// its gradient to the first maximal element.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, std::vector<std::size_t> axes, bool keep_dims = false);

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(ReduceOp::sum, x, axes);
}
template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return reduce(ReduceOp::mean, x, axes);
}

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return activation(Activation::relu, x); }
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) { return activation(Activation::gelu, x); }

/// Numerically stable (max-subtracted) softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x);
/// max(x, floor); the gradient is zero where the floor is active.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of x [B,C,...] over batch and spatial positions.
/// In training mode batch statistics are used and the running buffers are
/// updated in place (unbiased variance); otherwise the running buffers are used.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                     Tensor<T>& running_mean, Tensor<T>& running_var, BatchNormOptions options);

/// Normalizes over the last axis, then applies scale and shift of that length.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, double eps = 1e-5);

/// Test-only fault injection for negative controls of the gradient audit.
namespace fault {
/// When set, matmul's backward pass negates the gradient of its right operand.
void set_flip_matmul_rhs_grad(bool enabled);
bool flip_matmul_rhs_grad();
}  // namespace fault

}  // namespace crossgaze
