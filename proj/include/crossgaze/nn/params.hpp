#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "crossgaze/tensor/tensor.hpp"

namespace crossgaze::nn {

/// Named parameter set. Paths are dot-separated ("face_enc.stage1.mix.branch3x3.conv.w")
/// and enumerate lexicographically. Trainable parameters and non-trainable
/// buffers (normalization running statistics) live in separate maps.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  Tensor<T>& add_parameter(const std::string& path, Tensor<T> value);
  Tensor<T>& add_buffer(const std::string& path, Tensor<T> value);

  bool has_parameter(std::string_view path) const { return params_.find(std::string(path)) != params_.end(); }
  Tensor<T>& parameter(std::string_view path);
  const Tensor<T>& parameter(std::string_view path) const;
  Tensor<T>& buffer(std::string_view path);
  const Tensor<T>& buffer(std::string_view path) const;

  Map& parameters() { return params_; }
  const Map& parameters() const { return params_; }
  Map& buffers() { return buffers_; }
  const Map& buffers() const { return buffers_; }

  /// Total number of trainable scalars.
  std::size_t parameter_count() const;
  void zero_grad();

  /// Deep copy with element conversion; gradients are not copied.
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [path, t] : params_) out.add_parameter(path, t.template cast<U>());
    for (const auto& [path, t] : buffers_) out.add_buffer(path, t.template cast<U>());
    return out;
  }
  ParamStore clone() const { return cast<T>(); }

 private:
  Map params_;
  Map buffers_;
};

enum class Init {
  fan_in_uniform,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  zeros,
  ones,
};

/// Declares parameters with deterministic initial values. Each tensor draws
/// from its own generator seeded by hash(seed, path), so values do not depend
/// on declaration order.
template <typename T>
class ParamBuilder {
 public:
  ParamBuilder(ParamStore<T>& store, std::uint64_t seed) : store_(store), seed_(seed) {}

  Tensor<T>& parameter(const std::string& path, Shape shape, Init init, std::size_t fan_in = 0);
  Tensor<T>& buffer(const std::string& path, Shape shape, T fill);

 private:
  ParamStore<T>& store_;
  std::uint64_t seed_;
};

/// Read-side view used by forward passes: a store, a path prefix, and the
/// train/eval mode.
template <typename T>
class LayerScope {
 public:
  LayerScope(ParamStore<T>& store, bool training, std::string prefix = {})
      : store_(&store), training_(training), prefix_(std::move(prefix)) {}

  LayerScope child(std::string_view name) const { return LayerScope(*store_, training_, path(name)); }
  std::string path(std::string_view name) const {
    return prefix_.empty() ? std::string(name) : prefix_ + "." + std::string(name);
  }
  Tensor<T>& param(std::string_view name) const { return store_->parameter(path(name)); }
  bool has_param(std::string_view name) const { return store_->has_parameter(path(name)); }
  Tensor<T>& buffer(std::string_view name) const { return store_->buffer(path(name)); }
  bool training() const { return training_; }
  const std::string& prefix() const { return prefix_; }

 private:
  ParamStore<T>* store_;
  bool training_;
  std::string prefix_;
};

inline std::string join_path(std::string_view prefix, std::string_view name) {
  return prefix.empty() ? std::string(name) : std::string(prefix) + "." + std::string(name);
}

}  // namespace crossgaze::nn
