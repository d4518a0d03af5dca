#include "crossgaze/nn/params.hpp"

#include <cmath>
#include <stdexcept>

#include "crossgaze/tensor/rng.hpp"

namespace crossgaze::nn {

template <typename T>
Tensor<T>& ParamStore<T>::add_parameter(const std::string& path, Tensor<T> value) {
  if (params_.count(path) || buffers_.count(path)) throw std::invalid_argument("duplicate parameter path " + path);
  value.set_requires_grad(true);
  return params_.emplace(path, std::move(value)).first->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::add_buffer(const std::string& path, Tensor<T> value) {
  if (params_.count(path) || buffers_.count(path)) throw std::invalid_argument("duplicate buffer path " + path);
  value.set_requires_grad(false);
  return buffers_.emplace(path, std::move(value)).first->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::parameter(std::string_view path) {
  auto it = params_.find(std::string(path));
  if (it == params_.end()) throw std::out_of_range("no parameter " + std::string(path));
  return it->second;
}

template <typename T>
const Tensor<T>& ParamStore<T>::parameter(std::string_view path) const {
  auto it = params_.find(std::string(path));
  if (it == params_.end()) throw std::out_of_range("no parameter " + std::string(path));
  return it->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::buffer(std::string_view path) {
  auto it = buffers_.find(std::string(path));
  if (it == buffers_.end()) throw std::out_of_range("no buffer " + std::string(path));
  return it->second;
}

template <typename T>
const Tensor<T>& ParamStore<T>::buffer(std::string_view path) const {
  auto it = buffers_.find(std::string(path));
  if (it == buffers_.end()) throw std::out_of_range("no buffer " + std::string(path));
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [path, t] : params_) n += t.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [path, t] : params_) t.zero_grad();
}

template <typename T>
Tensor<T>& ParamBuilder<T>::parameter(const std::string& path, Shape shape, Init init, std::size_t fan_in) {
  Tensor<T> t(std::move(shape));
  switch (init) {
    case Init::zeros:
      break;
    case Init::ones:
      for (auto& v : t.data()) v = T{1};
      break;
    case Init::fan_in_uniform: {
      if (fan_in == 0) throw std::invalid_argument("fan_in required for " + path);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Rng rng(hash_combine(seed_, hash_string(path)));
      for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
      break;
    }
  }
  return store_.add_parameter(path, std::move(t));
}

template <typename T>
Tensor<T>& ParamBuilder<T>::buffer(const std::string& path, Shape shape, T fill) {
  return store_.add_buffer(path, Tensor<T>::full(std::move(shape), fill));
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamBuilder<float>;
template class ParamBuilder<double>;

}  // namespace crossgaze::nn
