#pragma once

#include <cstddef>
#include <string>

#include "crossgaze/nn/params.hpp"
#include "crossgaze/tensor/ops.hpp"

namespace crossgaze::nn {

// Each block comes as a declare_* function, which registers the block's
// parameters under a prefix, and a forward function reading them back through
// a LayerScope rooted at the same prefix.

// linear: "w" [in,out], "b" [out]. Accepts x [...,in].
template <typename T>
void declare_linear(ParamBuilder<T>& b, const std::string& prefix, std::size_t in, std::size_t out);
template <typename T>
Tensor<T> linear(const LayerScope<T>& s, const Tensor<T>& x);

struct ConvSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  /// Defaults to kernel/2 ("same" padding for odd kernels).
  std::size_t padding() const { return kernel / 2; }
};

// conv_block: relu(batch_norm(conv(x))). "conv.w" [out,in,k,k], "norm.scale",
// "norm.shift", buffers "norm.running_mean", "norm.running_var".
template <typename T>
void declare_conv_block(ParamBuilder<T>& b, const std::string& prefix, const ConvSpec& spec);
template <typename T>
Tensor<T> conv_block(const LayerScope<T>& s, const Tensor<T>& x, std::size_t stride = 1);

// residual_block: relu(skip(x) + conv2(conv_block1(x))). conv2 has no bias or
// normalization and starts at zero. skip is identity, or a 1x1 strided
// projection "proj.w" when channels or stride change.
template <typename T>
void declare_residual_block(ParamBuilder<T>& b, const std::string& prefix, std::size_t in, std::size_t out,
                            std::size_t stride);
template <typename T>
Tensor<T> residual_block(const LayerScope<T>& s, const Tensor<T>& x, std::size_t stride);

// multi_branch_block over c channels: branches of width max(1, c/4) with 1x1,
// 3x3 and two stacked 3x3 receptive fields, concatenated, projected back to c
// by a zero-initialized 1x1 conv "project.w", then relu(x + projection).
template <typename T>
void declare_multi_branch_block(ParamBuilder<T>& b, const std::string& prefix, std::size_t channels);
template <typename T>
Tensor<T> multi_branch_block(const LayerScope<T>& s, const Tensor<T>& x);
std::size_t multi_branch_width(std::size_t channels);

// layer_norm: "scale" (ones), "shift" (zeros), over the last axis.
template <typename T>
void declare_layer_norm(ParamBuilder<T>& b, const std::string& prefix, std::size_t dim);
template <typename T>
Tensor<T> layer_norm(const LayerScope<T>& s, const Tensor<T>& x);

class AttentionConfig {
 public:
  /// Throws std::invalid_argument unless heads divides model_dim.
  AttentionConfig(std::size_t model_dim, std::size_t heads);
  std::size_t model_dim() const { return model_dim_; }
  std::size_t heads() const { return heads_; }
  std::size_t head_dim() const { return model_dim_ / heads_; }

 private:
  std::size_t model_dim_;
  std::size_t heads_;
};

// cross_attention: "wq", "wk", "wv", "wo" (each [d,d], applied as x.W) and
// "norm.*". Query tokens [B,Tq,d] attend over key/value tokens [B,Tkv,d].
template <typename T>
void declare_cross_attention(ParamBuilder<T>& b, const std::string& prefix, const AttentionConfig& cfg);
/// Scaled logits Q.K^T / sqrt(head_dim), shape [B,h,Tq,Tkv].
template <typename T>
Tensor<T> attention_logits(const LayerScope<T>& s, const Tensor<T>& q, const Tensor<T>& kv,
                           const AttentionConfig& cfg);
/// Output-projected multi-head attention before the residual add, [B,Tq,d].
template <typename T>
Tensor<T> attention_context(const LayerScope<T>& s, const Tensor<T>& q, const Tensor<T>& kv,
                            const AttentionConfig& cfg);
/// layer_norm(q + attention_context(q, kv)).
template <typename T>
Tensor<T> cross_attention(const LayerScope<T>& s, const Tensor<T>& q, const Tensor<T>& kv,
                          const AttentionConfig& cfg);

// fcn_fusion: linear "fc1" (2d->d), relu, linear "fc2" (d->d).
template <typename T>
void declare_fcn_fusion(ParamBuilder<T>& b, const std::string& prefix, std::size_t dim);
template <typename T>
Tensor<T> fcn_fusion(const LayerScope<T>& s, const Tensor<T>& face, const Tensor<T>& eyes);

// mlp_head: linear "fc1" (d->d/2), relu, linear "fc2" (d/2->3).
template <typename T>
void declare_mlp_head(ParamBuilder<T>& b, const std::string& prefix, std::size_t dim);
template <typename T>
Tensor<T> mlp_head(const LayerScope<T>& s, const Tensor<T>& x);

}  // namespace crossgaze::nn
