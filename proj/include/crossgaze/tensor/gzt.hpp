#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "crossgaze/tensor/tensor.hpp"

namespace crossgaze {

// GZT1 tensor files:
//   "GZT1" | u8 dtype (0 = f32, 1 = f64) | u8 ndim | ndim x u32 LE dims | LE row-major payload

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

struct GztHeader {
  DType dtype;
  Shape shape;
  std::size_t header_bytes;
  std::size_t payload_bytes() const { return shape_numel(shape) * (dtype == DType::f32 ? 4 : 8); }
};

template <typename T>
void write_gzt(std::ostream& out, const Tensor<T>& tensor);

/// Reads one tensor, converting the stored dtype to T. `base_offset` is added
/// to byte offsets reported in FormatError (for tensors embedded in containers).
template <typename T>
Tensor<T> read_gzt(std::istream& in, std::size_t base_offset = 0);

GztHeader read_gzt_header(std::istream& in, std::size_t base_offset = 0);

template <typename T>
void save_gzt(const std::filesystem::path& path, const Tensor<T>& tensor);
template <typename T>
Tensor<T> load_gzt(const std::filesystem::path& path);

}  // namespace crossgaze
