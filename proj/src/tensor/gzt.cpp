#include "crossgaze/tensor/gzt.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace crossgaze {
namespace {

static_assert(std::endian::native == std::endian::little, "GZT1 IO assumes a little-endian host");

constexpr std::array<char, 4> kMagic{'G', 'Z', 'T', '1'};

void read_exact(std::istream& in, void* dst, std::size_t n, std::size_t offset, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(std::string("GZT1: truncated ") + what, offset + static_cast<std::size_t>(in.gcount()));
  }
}

}  // namespace

template <typename T>
void write_gzt(std::ostream& out, const Tensor<T>& tensor) {
  if (tensor.rank() > 255) throw ShapeError("GZT1 supports at most 255 dimensions");
  out.write(kMagic.data(), kMagic.size());
  const auto dtype = static_cast<std::uint8_t>(dtype_of<T>());
  const auto ndim = static_cast<std::uint8_t>(tensor.rank());
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(ndim));
  for (std::size_t d : tensor.shape()) {
    const auto dim = static_cast<std::uint32_t>(d);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  }
  out.write(reinterpret_cast<const char*>(tensor.data().data()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(T)));
}

GztHeader read_gzt_header(std::istream& in, std::size_t base_offset) {
  std::array<char, 4> magic{};
  read_exact(in, magic.data(), magic.size(), base_offset, "magic");
  if (magic != kMagic) throw FormatError("GZT1: bad magic", base_offset);
  std::uint8_t dtype = 0, ndim = 0;
  read_exact(in, &dtype, 1, base_offset + 4, "dtype");
  if (dtype > 1) throw FormatError("GZT1: unknown dtype code " + std::to_string(dtype), base_offset + 4);
  read_exact(in, &ndim, 1, base_offset + 5, "ndim");
  GztHeader header{static_cast<DType>(dtype), Shape(ndim), 6 + 4 * static_cast<std::size_t>(ndim)};
  for (std::size_t i = 0; i < ndim; ++i) {
    std::uint32_t dim = 0;
    const std::size_t at = base_offset + 6 + 4 * i;
    read_exact(in, &dim, sizeof dim, at, "dims");
    if (dim == 0) throw FormatError("GZT1: zero-sized dimension", at);
    header.shape[i] = dim;
  }
  return header;
}

template <typename T>
Tensor<T> read_gzt(std::istream& in, std::size_t base_offset) {
  const GztHeader header = read_gzt_header(in, base_offset);
  const std::size_t n = shape_numel(header.shape);
  const std::size_t payload_at = base_offset + header.header_bytes;
  std::vector<T> values(n);
  if (header.dtype == dtype_of<T>()) {
    read_exact(in, values.data(), n * sizeof(T), payload_at, "payload");
  } else if (header.dtype == DType::f32) {
    std::vector<float> raw(n);
    read_exact(in, raw.data(), n * sizeof(float), payload_at, "payload");
    std::copy(raw.begin(), raw.end(), values.begin());
  } else {
    std::vector<double> raw(n);
    read_exact(in, raw.data(), n * sizeof(double), payload_at, "payload");
    for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<T>(raw[i]);
  }
  return Tensor<T>(header.shape, std::move(values));
}

template <typename T>
void save_gzt(const std::filesystem::path& path, const Tensor<T>& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_gzt(out, tensor);
  out.flush();
  if (!out) throw DataError("failed writing " + path.string());
}

template <typename T>
Tensor<T> load_gzt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return read_gzt<T>(in);
  } catch (const FormatError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

template void write_gzt<float>(std::ostream&, const Tensor<float>&);
template void write_gzt<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_gzt<float>(std::istream&, std::size_t);
template Tensor<double> read_gzt<double>(std::istream&, std::size_t);
template void save_gzt<float>(const std::filesystem::path&, const Tensor<float>&);
template void save_gzt<double>(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_gzt<float>(const std::filesystem::path&);
template Tensor<double> load_gzt<double>(const std::filesystem::path&);

}  // namespace crossgaze
