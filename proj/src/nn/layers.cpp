#include "crossgaze/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace crossgaze::nn {

namespace {

template <typename T>
void declare_conv(ParamBuilder<T>& b, const std::string& path, std::size_t in, std::size_t out,
                  std::size_t kernel, Init init = Init::fan_in_uniform) {
  b.parameter(path, {out, in, kernel, kernel}, init, in * kernel * kernel);
}

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride) {
  return conv2d(x, w, Conv2dOptions{stride, w.dim(2) / 2});
}

void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_string(shape));
  }
}

}  // namespace

template <typename T>
void declare_linear(ParamBuilder<T>& b, const std::string& prefix, std::size_t in, std::size_t out) {
  b.parameter(join_path(prefix, "w"), {in, out}, Init::fan_in_uniform, in);
  b.parameter(join_path(prefix, "b"), {out}, Init::fan_in_uniform, in);
}

template <typename T>
Tensor<T> linear(const LayerScope<T>& s, const Tensor<T>& x) {
  const Tensor<T>& w = s.param("w");
  if (x.rank() < 2 || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear " + s.prefix() + ": input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(w.shape()));
  }
  return add(matmul(x, w), s.param("b"));
}

template <typename T>
void declare_conv_block(ParamBuilder<T>& b, const std::string& prefix, const ConvSpec& spec) {
  declare_conv(b, join_path(prefix, "conv.w"), spec.in, spec.out, spec.kernel);
  b.parameter(join_path(prefix, "norm.scale"), {spec.out}, Init::ones);
  b.parameter(join_path(prefix, "norm.shift"), {spec.out}, Init::zeros);
  b.buffer(join_path(prefix, "norm.running_mean"), {spec.out}, T{0});
  b.buffer(join_path(prefix, "norm.running_var"), {spec.out}, T{1});
}

template <typename T>
Tensor<T> conv_block(const LayerScope<T>& s, const Tensor<T>& x, std::size_t stride) {
  Tensor<T> y = conv(x, s.param("conv.w"), stride);
  BatchNormOptions opts;
  opts.training = s.training();
  y = batch_norm(y, s.param("norm.scale"), s.param("norm.shift"), s.buffer("norm.running_mean"),
                 s.buffer("norm.running_var"), opts);
  return relu(y);
}

template <typename T>
void declare_residual_block(ParamBuilder<T>& b, const std::string& prefix, std::size_t in, std::size_t out,
                            std::size_t stride) {
  declare_conv_block(b, join_path(prefix, "conv1"), ConvSpec{in, out, 3, stride});
  declare_conv(b, join_path(prefix, "conv2.w"), out, out, 3, Init::zeros);
  if (in != out || stride != 1) declare_conv(b, join_path(prefix, "proj.w"), in, out, 1);
}

template <typename T>
Tensor<T> residual_block(const LayerScope<T>& s, const Tensor<T>& x, std::size_t stride) {
  require_rank(x.shape(), 4, "residual_block");
  Tensor<T> branch = conv_block(s.child("conv1"), x, stride);
  branch = conv(branch, s.param("conv2.w"), 1);
  Tensor<T> skip = s.has_param("proj.w") ? conv(x, s.param("proj.w"), stride) : x;
  if (skip.shape() != branch.shape()) {
    throw ShapeError("residual_block " + s.prefix() + ": skip " + shape_string(skip.shape()) +
                     " does not match branch " + shape_string(branch.shape()));
  }
  return relu(add(skip, branch));
}

std::size_t multi_branch_width(std::size_t channels) { return channels < 4 ? 1 : channels / 4; }

template <typename T>
void declare_multi_branch_block(ParamBuilder<T>& b, const std::string& prefix, std::size_t channels) {
  const std::size_t w = multi_branch_width(channels);
  declare_conv_block(b, join_path(prefix, "branch1x1"), ConvSpec{channels, w, 1});
  declare_conv_block(b, join_path(prefix, "branch3x3"), ConvSpec{channels, w, 3});
  declare_conv_block(b, join_path(prefix, "branch5x5a"), ConvSpec{channels, w, 3});
  declare_conv_block(b, join_path(prefix, "branch5x5b"), ConvSpec{w, w, 3});
  declare_conv(b, join_path(prefix, "project.w"), 3 * w, channels, 1, Init::zeros);
}

template <typename T>
Tensor<T> multi_branch_block(const LayerScope<T>& s, const Tensor<T>& x) {
  require_rank(x.shape(), 4, "multi_branch_block");
  Tensor<T> b1 = conv_block(s.child("branch1x1"), x);
  Tensor<T> b3 = conv_block(s.child("branch3x3"), x);
  Tensor<T> b5 = conv_block(s.child("branch5x5b"), conv_block(s.child("branch5x5a"), x));
  Tensor<T> mixed = conv(concat<T>({b1, b3, b5}, 1), s.param("project.w"), 1);
  return relu(add(x, mixed));
}

template <typename T>
void declare_layer_norm(ParamBuilder<T>& b, const std::string& prefix, std::size_t dim) {
  b.parameter(join_path(prefix, "scale"), {dim}, Init::ones);
  b.parameter(join_path(prefix, "shift"), {dim}, Init::zeros);
}

template <typename T>
Tensor<T> layer_norm(const LayerScope<T>& s, const Tensor<T>& x) {
  return crossgaze::layer_norm(x, s.param("scale"), s.param("shift"));
}

AttentionConfig::AttentionConfig(std::size_t model_dim, std::size_t heads) : model_dim_(model_dim), heads_(heads) {
  if (model_dim == 0 || heads == 0 || model_dim % heads != 0) {
    throw std::invalid_argument("attention model_dim " + std::to_string(model_dim) +
                                " is not divisible by heads " + std::to_string(heads));
  }
}

template <typename T>
void declare_cross_attention(ParamBuilder<T>& b, const std::string& prefix, const AttentionConfig& cfg) {
  const std::size_t d = cfg.model_dim();
  for (const char* name : {"wq", "wk", "wv", "wo"}) b.parameter(join_path(prefix, name), {d, d}, Init::fan_in_uniform, d);
  declare_layer_norm(b, join_path(prefix, "norm"), d);
}

namespace {

template <typename T>
void check_tokens(const LayerScope<T>& s, const Tensor<T>& q, const Tensor<T>& kv, const AttentionConfig& cfg) {
  const std::size_t d = cfg.model_dim();
  if (q.rank() != 3 || kv.rank() != 3 || q.dim(2) != d || kv.dim(2) != d || q.dim(0) != kv.dim(0)) {
    throw ShapeError("cross_attention " + s.prefix() + ": query " + shape_string(q.shape()) + " and key/value " +
                     shape_string(kv.shape()) + " must be [B,T," + std::to_string(d) + "] with equal B");
  }
}

// [B,T,d] -> [B*h, T, hd]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, const AttentionConfig& cfg) {
  const std::size_t b = x.dim(0), t = x.dim(1), h = cfg.heads(), hd = cfg.head_dim();
  return reshape(permute(reshape(x, {b, t, h, hd}), {0, 2, 1, 3}), {b * h, t, hd});
}

// [B,T,d] -> [B*h, hd, T]
template <typename T>
Tensor<T> split_heads_transposed(const Tensor<T>& x, const AttentionConfig& cfg) {
  const std::size_t b = x.dim(0), t = x.dim(1), h = cfg.heads(), hd = cfg.head_dim();
  return reshape(permute(reshape(x, {b, t, h, hd}), {0, 2, 3, 1}), {b * h, hd, t});
}

template <typename T>
Tensor<T> scaled_logits(const LayerScope<T>& s, const Tensor<T>& q, const Tensor<T>& kv, const AttentionConfig& cfg) {
  Tensor<T> qh = split_heads(matmul(q, s.param("wq")), cfg);
  Tensor<T> kt = split_heads_transposed(matmul(kv, s.param("wk")), cfg);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));
  return elementwise(BinaryOp::mul, matmul(qh, kt), scale);
}

}  // namespace

template <typename T>
Tensor<T> attention_logits(const LayerScope<T>& s, const Tensor<T>& q, const Tensor<T>& kv,
                           const AttentionConfig& cfg) {
  check_tokens(s, q, kv, cfg);
  return reshape(scaled_logits(s, q, kv, cfg), {q.dim(0), cfg.heads(), q.dim(1), kv.dim(1)});
}

template <typename T>
Tensor<T> attention_context(const LayerScope<T>& s, const Tensor<T>& q, const Tensor<T>& kv,
                            const AttentionConfig& cfg) {
  check_tokens(s, q, kv, cfg);
  const std::size_t b = q.dim(0), tq = q.dim(1), h = cfg.heads(), hd = cfg.head_dim();
  Tensor<T> weights = softmax(scaled_logits(s, q, kv, cfg), 2);
  Tensor<T> vh = split_heads(matmul(kv, s.param("wv")), cfg);
  Tensor<T> ctx = matmul(weights, vh);  // [B*h, Tq, hd]
  ctx = reshape(permute(reshape(ctx, {b, h, tq, hd}), {0, 2, 1, 3}), {b, tq, cfg.model_dim()});
  return matmul(ctx, s.param("wo"));
}

template <typename T>
Tensor<T> cross_attention(const LayerScope<T>& s, const Tensor<T>& q, const Tensor<T>& kv,
                          const AttentionConfig& cfg) {
  return layer_norm(s.child("norm"), add(q, attention_context(s, q, kv, cfg)));
}

template <typename T>
void declare_fcn_fusion(ParamBuilder<T>& b, const std::string& prefix, std::size_t dim) {
  declare_linear(b, join_path(prefix, "fc1"), 2 * dim, dim);
  declare_linear(b, join_path(prefix, "fc2"), dim, dim);
}

template <typename T>
Tensor<T> fcn_fusion(const LayerScope<T>& s, const Tensor<T>& face, const Tensor<T>& eyes) {
  if (face.shape() != eyes.shape() || face.rank() != 2) {
    throw ShapeError("fcn_fusion " + s.prefix() + ": face " + shape_string(face.shape()) + " and eyes " +
                     shape_string(eyes.shape()) + " must both be [B,d]");
  }
  return linear(s.child("fc2"), relu(linear(s.child("fc1"), concat<T>({face, eyes}, 1))));
}

template <typename T>
void declare_mlp_head(ParamBuilder<T>& b, const std::string& prefix, std::size_t dim) {
  const std::size_t hidden = dim < 2 ? 1 : dim / 2;
  declare_linear(b, join_path(prefix, "fc1"), dim, hidden);
  declare_linear(b, join_path(prefix, "fc2"), hidden, 3);
}

template <typename T>
Tensor<T> mlp_head(const LayerScope<T>& s, const Tensor<T>& x) {
  return linear(s.child("fc2"), relu(linear(s.child("fc1"), x)));
}

#define CROSSGAZE_INSTANTIATE(T)                                                                                  \
  template void declare_linear<T>(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t);               \
  template Tensor<T> linear<T>(const LayerScope<T>&, const Tensor<T>&);                                          \
  template void declare_conv_block<T>(ParamBuilder<T>&, const std::string&, const ConvSpec&);                    \
  template Tensor<T> conv_block<T>(const LayerScope<T>&, const Tensor<T>&, std::size_t);                         \
  template void declare_residual_block<T>(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t,        \
                                          std::size_t);                                                          \
  template Tensor<T> residual_block<T>(const LayerScope<T>&, const Tensor<T>&, std::size_t);                     \
  template void declare_multi_branch_block<T>(ParamBuilder<T>&, const std::string&, std::size_t);                \
  template Tensor<T> multi_branch_block<T>(const LayerScope<T>&, const Tensor<T>&);                              \
  template void declare_layer_norm<T>(ParamBuilder<T>&, const std::string&, std::size_t);                        \
  template Tensor<T> layer_norm<T>(const LayerScope<T>&, const Tensor<T>&);                                      \
  template void declare_cross_attention<T>(ParamBuilder<T>&, const std::string&, const AttentionConfig&);        \
  template Tensor<T> attention_logits<T>(const LayerScope<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                         const AttentionConfig&);                                                \
  template Tensor<T> attention_context<T>(const LayerScope<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                          const AttentionConfig&);                                               \
  template Tensor<T> cross_attention<T>(const LayerScope<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                        const AttentionConfig&);                                                 \
  template void declare_fcn_fusion<T>(ParamBuilder<T>&, const std::string&, std::size_t);                        \
  template Tensor<T> fcn_fusion<T>(const LayerScope<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template void declare_mlp_head<T>(ParamBuilder<T>&, const std::string&, std::size_t);                          \
  template Tensor<T> mlp_head<T>(const LayerScope<T>&, const Tensor<T>&);

CROSSGAZE_INSTANTIATE(float)
CROSSGAZE_INSTANTIATE(double)

}  // namespace crossgaze::nn
