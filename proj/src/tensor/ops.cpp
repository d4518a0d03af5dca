#include "crossgaze/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "crossgaze/tensor/gemm.hpp"

namespace crossgaze {

namespace fault {
namespace {
thread_local bool flip_rhs = false;
}
void set_flip_matmul_rhs_grad(bool enabled) { flip_rhs = enabled; }
bool flip_matmul_rhs_grad() { return flip_rhs; }
}  // namespace fault

namespace {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T, typename Backward>
void record(const char* kind, Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
            Backward&& backward) {
  std::vector<std::optional<std::size_t>> ids;
  ids.reserve(inputs.size());
  for (const Tensor<T>* t : inputs) ids.push_back(t->tape_id());
  out.set_requires_grad(true);
  Tape<T>::active()->record(kind, std::move(ids), out.node(), std::forward<Backward>(backward));
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// For each flat index of `full`, the flat index of the broadcast operand.
std::vector<std::size_t> broadcast_map(const Shape& full, const Shape& part) {
  const std::size_t rank = full.size();
  const std::size_t offset = rank - part.size();
  std::vector<std::size_t> part_strides(rank, 0);
  {
    const auto ps = strides_of(part);
    for (std::size_t i = 0; i < part.size(); ++i) {
      part_strides[offset + i] = part[i] == 1 ? 0 : ps[i];
    }
  }
  const std::size_t n = shape_numel(full);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t pos = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = pos;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      pos += part_strides[d];
      if (idx[d] < full[d]) break;
      pos -= part_strides[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

bool broadcastable(const Shape& full, const Shape& part) {
  if (shape_numel(part) == 1) return true;
  if (part.size() > full.size()) return false;
  const std::size_t offset = full.size() - part.size();
  for (std::size_t i = 0; i < part.size(); ++i) {
    if (part[i] != 1 && part[i] != full[offset + i]) return false;
  }
  return true;
}

const char* binary_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
  }
  return "?";
}

template <typename T>
inline T apply(BinaryOp op, T a, T b) {
  switch (op) {
    case BinaryOp::add: return a + b;
    case BinaryOp::sub: return a - b;
    case BinaryOp::mul: return a * b;
    case BinaryOp::div: return a / b;
  }
  return T{};
}

// d(a op b)/da and d(a op b)/db.
template <typename T>
inline T partial_a(BinaryOp op, T, T b) {
  switch (op) {
    case BinaryOp::add:
    case BinaryOp::sub: return T{1};
    case BinaryOp::mul: return b;
    case BinaryOp::div: return T{1} / b;
  }
  return T{};
}
template <typename T>
inline T partial_b(BinaryOp op, T a, T b) {
  switch (op) {
    case BinaryOp::add: return T{1};
    case BinaryOp::sub: return T{-1};
    case BinaryOp::mul: return a;
    case BinaryOp::div: return -a / (b * b);
  }
  return T{};
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!broadcastable(a.shape(), b.shape())) {
    throw ShapeError(std::string(binary_name(op)) + ": cannot broadcast " + shape_string(b.shape()) +
                     " into " + shape_string(a.shape()));
  }
  Tensor<T> out(a.shape());
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  const bool same = a.numel() == b.numel();
  const bool scalar = b.numel() == 1;
  std::vector<std::size_t> map;
  if (same) {
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = apply(op, av[i], bv[i]);
  } else if (scalar) {
    const T s = bv[0];
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = apply(op, av[i], s);
  } else {
    map = broadcast_map(a.shape(), b.shape());
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = apply(op, av[i], bv[map[i]]);
  }
  if (should_record<T>({&a, &b})) {
    record<T>(binary_name(op), out, {&a, &b}, [op, a, b, node = out.node(), map = std::move(map)]() mutable {
      const auto& g = node->grad;
      const auto av = std::as_const(a).data();
      const auto bv = std::as_const(b).data();
      const bool same = av.size() == bv.size();
      auto b_index = [&](std::size_t i) -> std::size_t { return same ? i : (bv.size() == 1 ? 0 : map[i]); };
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * partial_a(op, av[i], bv[b_index(i)]);
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t j = b_index(i);
          gb[j] += g[i] * partial_b(op, av[i], bv[j]);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, T b) {
  Tensor<T> out(a.shape());
  const auto av = a.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = apply(op, av[i], b);
  if (should_record<T>({&a})) {
    record<T>(binary_name(op), out, {&a}, [op, a, b, node = out.node()]() mutable {
      const auto& g = node->grad;
      const auto av = std::as_const(a).data();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * partial_a(op, av[i], b);
    });
  }
  return out;
}

// --------------------------------------------------------------------- matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  auto fail = [&](const char* why) {
    throw ShapeError(std::string("matmul: ") + why + " for " + shape_string(as) + " x " + shape_string(bs));
  };
  if (as.size() < 2 || as.size() > 3 || bs.size() < 2 || bs.size() > 3) fail("unsupported ranks");
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t n = bs.back();
  if (bs[bs.size() - 2] != k) fail("inner dimensions differ");
  const std::size_t batch_a = as.size() == 3 ? as[0] : 1;
  const std::size_t batch_b = bs.size() == 3 ? bs[0] : 1;
  if (as.size() == 3 && bs.size() == 3 && batch_a != batch_b) fail("batch dimensions differ");
  const std::size_t batch = std::max(batch_a, batch_b);
  const bool batched = as.size() == 3 || bs.size() == 3;

  Tensor<T> out(batched ? Shape{batch, m, n} : Shape{m, n});
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  T* op = out.data().data();
  if (batch_b == 1) {
    // A's batch folds into its rows.
    gemm<T>(Trans::no, Trans::no, batch * m, n, k, ap, k, bp, n, T{0}, op, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const T* ai = ap + (batch_a == 1 ? 0 : i * m * k);
      gemm<T>(Trans::no, Trans::no, m, n, k, ai, k, bp + i * k * n, n, T{0}, op + i * m * n, n);
    }
  }

  if (should_record<T>({&a, &b})) {
    record<T>("matmul", out, {&a, &b}, [a, b, node = out.node(), m, n, k, batch, batch_a, batch_b]() mutable {
      const T* g = node->grad.data();
      const T* ap = std::as_const(a).data().data();
      const T* bp = std::as_const(b).data().data();
      if (a.requires_grad()) {
        T* ga = a.grad_buffer().data();
        if (batch_b == 1) {
          gemm<T>(Trans::no, Trans::yes, batch * m, k, n, g, n, bp, n, T{1}, ga, k);
        } else {
          for (std::size_t i = 0; i < batch; ++i) {
            T* gai = ga + (batch_a == 1 ? 0 : i * m * k);
            gemm<T>(Trans::no, Trans::yes, m, k, n, g + i * m * n, n, bp + i * k * n, n, T{1}, gai, k);
          }
        }
      }
      if (b.requires_grad()) {
        auto gb_span = b.grad_buffer();
        std::vector<T> local(gb_span.size(), T{0});
        if (batch_b == 1) {
          gemm<T>(Trans::yes, Trans::no, k, n, batch * m, ap, k, g, n, T{0}, local.data(), n);
        } else {
          for (std::size_t i = 0; i < batch; ++i) {
            const T* ai = ap + (batch_a == 1 ? 0 : i * m * k);
            gemm<T>(Trans::yes, Trans::no, k, n, m, ai, k, g + i * m * n, n, T{0}, local.data() + i * k * n, n);
          }
        }
        const T sign = fault::flip_matmul_rhs_grad() ? T{-1} : T{1};
        for (std::size_t i = 0; i < local.size(); ++i) gb_span[i] += sign * local[i];
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------- conv2d

namespace {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t out_channels, kh, kw, stride, padding;
  std::size_t out_h, out_w;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t plane() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

// Output columns [ox_begin, ox_end) whose input column ox*stride + j - padding lies inside [0, width).
inline void valid_columns(const ConvGeometry& g, std::size_t j, std::size_t& begin, std::size_t& end) {
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(g.stride);
  const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(g.padding) - static_cast<std::ptrdiff_t>(j);
  const std::ptrdiff_t hi = lo + static_cast<std::ptrdiff_t>(g.width);  // ox*s < hi
  const std::ptrdiff_t b = lo <= 0 ? 0 : (lo + s - 1) / s;
  const std::ptrdiff_t e = hi <= 0 ? 0 : (hi + s - 1) / s;
  begin = static_cast<std::size_t>(std::min<std::ptrdiff_t>(b, static_cast<std::ptrdiff_t>(g.out_w)));
  end = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(e, static_cast<std::ptrdiff_t>(begin),
                                                            static_cast<std::ptrdiff_t>(g.out_w)));
}

// One image: col[(c*kh + i)*kw + j][oy*OW + ox] = x[c][oy*s - p + i][ox*s - p + j], zero outside.
// Rows of col are ld apart so several images can share one column matrix.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col, std::size_t ld) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* src = x + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * ld;
        std::size_t ox0, ox1;
        valid_columns(g, j, ox0, ox1);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          T* d = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(d, d + g.out_w, T{0});
            continue;
          }
          const T* s = src + static_cast<std::size_t>(iy) * g.width + j - g.padding;  // s[ox*stride] is the tap
          std::fill(d, d + ox0, T{0});
          if (g.stride == 1) {
            std::copy(s + ox0, s + ox1, d + ox0);
          } else {
            for (std::size_t ox = ox0; ox < ox1; ++ox) d[ox] = s[ox * g.stride];
          }
          std::fill(d + ox1, d + g.out_w, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, std::size_t ld, T* dx) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* dst = dx + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * ld;
        std::size_t ox0, ox1;
        valid_columns(g, j, ox0, ox1);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* d = dst + static_cast<std::size_t>(iy) * g.width + j - g.padding;
          const T* s = row + oy * g.out_w;
          for (std::size_t ox = ox0; ox < ox1; ++ox) d[ox * g.stride] += s[ox];
        }
      }
    }
  }
}

// Target column count per conv GEMM when grouping images with small output planes.
constexpr std::size_t kConvGroupColumns = 256;

template <typename T, int Slot>
std::vector<T>& conv_scratch(std::size_t n) {
  thread_local std::vector<T> buffer;
  if (buffer.size() < n) buffer.resize(n);
  return buffer;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, Conv2dOptions options) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: expected x [B,C,H,W] and w [O,C,kh,kw], got " + shape_string(x.shape()) +
                     " and " + shape_string(w.shape()));
  }
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d: input channels " + shape_string(x.shape()) + " do not match kernel " +
                     shape_string(w.shape()));
  }
  if (options.stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), options.stride,
                 options.padding, 0, 0};
  if (g.kh > g.height + 2 * g.padding || g.kw > g.width + 2 * g.padding) {
    throw ShapeError("conv2d: kernel " + shape_string(w.shape()) + " larger than padded input " +
                     shape_string(x.shape()));
  }
  g.out_h = (g.height + 2 * g.padding - g.kh) / g.stride + 1;
  g.out_w = (g.width + 2 * g.padding - g.kw) / g.stride + 1;

  // Images are processed in groups wide enough to fill the GEMM register
  // tile; a group of one writes straight into the output.
  const std::size_t patch = g.patch(), plane = g.plane();
  const std::size_t in_image = g.channels * g.height * g.width, out_image = g.out_channels * plane;
  const std::size_t group = std::min(g.batch, std::max<std::size_t>(1, (kConvGroupColumns + plane - 1) / plane));
  Tensor<T> out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  {
    const T* xp = x.data().data();
    const T* wp = w.data().data();
    T* op = out.data().data();
    const bool direct = group == 1 && g.pointwise();
    T* col = direct ? nullptr : conv_scratch<T, 0>(patch * plane * group).data();
    T* ybuf = group == 1 ? nullptr : conv_scratch<T, 1>(g.out_channels * plane * group).data();
    for (std::size_t b0 = 0; b0 < g.batch; b0 += group) {
      const std::size_t n = std::min(group, g.batch - b0), ld = n * plane;
      const T* cols = xp + b0 * in_image;
      if (col) {
        for (std::size_t b = 0; b < n; ++b) im2col(g, xp + (b0 + b) * in_image, col + b * plane, ld);
        cols = col;
      }
      if (!ybuf) {
        gemm<T>(Trans::no, Trans::no, g.out_channels, plane, patch, wp, patch, cols, plane, T{0},
                op + b0 * out_image, plane);
        continue;
      }
      gemm<T>(Trans::no, Trans::no, g.out_channels, ld, patch, wp, patch, cols, ld, T{0}, ybuf, ld);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t o = 0; o < g.out_channels; ++o) {
          const T* src = ybuf + o * ld + b * plane;
          std::copy(src, src + plane, op + (b0 + b) * out_image + o * plane);
        }
      }
    }
  }

  if (should_record<T>({&x, &w})) {
    record<T>("conv2d", out, {&x, &w}, [x, w, g, group, node = out.node()]() {
      const std::size_t patch = g.patch(), plane = g.plane();
      const std::size_t in_image = g.channels * g.height * g.width, out_image = g.out_channels * plane;
      const T* gp = node->grad.data();
      const T* xp = x.data().data();
      const T* wp = std::as_const(w).data().data();
      const bool direct = group == 1 && g.pointwise();
      T* col = direct ? nullptr : conv_scratch<T, 0>(patch * plane * group).data();
      T* gbuf = group == 1 ? nullptr : conv_scratch<T, 1>(g.out_channels * plane * group).data();
      T* dw = w.requires_grad() ? w.grad_buffer().data() : nullptr;
      T* dx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
      for (std::size_t b0 = 0; b0 < g.batch; b0 += group) {
        const std::size_t n = std::min(group, g.batch - b0), ld = n * plane;
        const T* gy = gp + b0 * out_image;
        if (gbuf) {
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t o = 0; o < g.out_channels; ++o) {
              const T* src = gp + (b0 + b) * out_image + o * plane;
              std::copy(src, src + plane, gbuf + o * ld + b * plane);
            }
          }
          gy = gbuf;
        }
        if (dw) {
          const T* cols = xp + b0 * in_image;
          if (col) {
            for (std::size_t b = 0; b < n; ++b) im2col(g, xp + (b0 + b) * in_image, col + b * plane, ld);
            cols = col;
          }
          gemm<T>(Trans::no, Trans::yes, g.out_channels, patch, ld, gy, ld, cols, ld, T{1}, dw, patch);
        }
        if (dx) {
          if (col) {
            gemm<T>(Trans::yes, Trans::no, patch, ld, g.out_channels, wp, patch, gy, ld, T{0}, col, ld);
            for (std::size_t b = 0; b < n; ++b) col2im_add(g, col + b * plane, ld, dx + (b0 + b) * in_image);
          } else {
            gemm<T>(Trans::yes, Trans::no, patch, plane, g.out_channels, wp, patch, gy, plane, T{1},
                    dx + b0 * in_image, plane);
          }
        }
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------- reduce

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, std::vector<std::size_t> axes, bool keep_dims) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (std::size_t ax : axes) {
    if (ax >= x.rank()) {
      throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for " + shape_string(x.shape()));
    }
  }
  if (axes.empty()) return x;

  const Shape& in = x.shape();
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t ax : axes) reduced[ax] = true;
  Shape kept_shape(in.size());
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < in.size(); ++d) {
    kept_shape[d] = reduced[d] ? 1 : in[d];
    if (reduced[d]) count *= in[d];
    if (!reduced[d] || keep_dims) out_shape.push_back(kept_shape[d]);
  }
  // Flat input index -> flat output index: the same map as broadcasting the
  // reduced tensor back over the input.
  std::vector<std::size_t> map = broadcast_map(in, kept_shape);

  Tensor<T> out(out_shape);
  auto ov = out.data();
  const auto xv = x.data();
  std::vector<std::size_t> argmax;
  if (op == ReduceOp::max) {
    argmax.assign(ov.size(), 0);
    std::vector<bool> seen(ov.size(), false);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const std::size_t o = map[i];
      if (!seen[o] || xv[i] > ov[o]) {
        ov[o] = xv[i];
        argmax[o] = i;
        seen[o] = true;
      }
    }
  } else {
    for (std::size_t i = 0; i < xv.size(); ++i) ov[map[i]] += xv[i];
    if (op == ReduceOp::mean) {
      const T inv = T{1} / static_cast<T>(count);
      for (auto& v : ov) v *= inv;
    }
  }

  if (should_record<T>({&x})) {
    const char* kind = op == ReduceOp::sum ? "sum" : op == ReduceOp::mean ? "mean" : "max";
    record<T>(kind, out, {&x},
              [op, x, count, map = std::move(map), argmax = std::move(argmax), node = out.node()]() mutable {
                const auto& g = node->grad;
                auto gx = x.grad_buffer();
                if (op == ReduceOp::max) {
                  for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
                  return;
                }
                const T scale = op == ReduceOp::mean ? T{1} / static_cast<T>(count) : T{1};
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[map[i]] * scale;
              });
  }
  return out;
}

// ----------------------------------------------------------------- activation

namespace {
constexpr double kGeluC = 0.044715;

template <typename T>
inline T gelu_value(T x) {
  const T s = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  return T{0.5} * x * (T{1} + std::tanh(s * (x + static_cast<T>(kGeluC) * x * x * x)));
}
template <typename T>
inline T gelu_derivative(T x) {
  const T s = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T c = static_cast<T>(kGeluC);
  const T u = s * (x + c * x * x * x);
  const T t = std::tanh(u);
  return T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * s * (T{1} + T{3} * c * x * x);
}
}  // namespace

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const auto xv = x.data();
  auto ov = out.data();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > T{0} ? xv[i] : T{0};
  } else {
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = gelu_value(xv[i]);
  }
  if (should_record<T>({&x})) {
    record<T>(kind == Activation::relu ? "relu" : "gelu", out, {&x}, [kind, x, node = out.node()]() mutable {
      const auto& g = node->grad;
      const auto xv = std::as_const(x).data();
      auto gx = x.grad_buffer();
      if (kind == Activation::relu) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (xv[i] > T{0}) gx[i] += g[i];
        }
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_derivative(xv[i]);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_string(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t len = s[axis];

  Tensor<T> out(s);
  const auto xv = x.data();
  auto yv = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xv[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, xv[base + l * inner]);
      T total{0};
      for (std::size_t l = 0; l < len; ++l) {
        const T e = std::exp(xv[base + l * inner] - mx);
        yv[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l) yv[base + l * inner] /= total;
    }
  }
  if (should_record<T>({&x})) {
    record<T>("softmax", out, {&x}, [x, node = out.node(), outer, inner, len]() mutable {
      const auto& g = node->grad;
      const auto& y = node->data;
      auto gx = x.grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          T dot{0};
          for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t i = base + l * inner;
            gx[i] += y[i] * (g[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::sqrt(xv[i]);
  if (should_record<T>({&x})) {
    record<T>("sqrt", out, {&x}, [x, node = out.node()]() mutable {
      const auto& g = node->grad;
      const auto& y = node->data;
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / (T{2} * y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T floor) {
  Tensor<T> out(x.shape());
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = std::max(xv[i], floor);
  if (should_record<T>({&x})) {
    record<T>("clamp_min", out, {&x}, [x, floor, node = out.node()]() mutable {
      const auto& g = node->grad;
      const auto xv = std::as_const(x).data();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] > floor) gx[i] += g[i];
      }
    });
  }
  return out;
}

// ------------------------------------------------------------ shape movement

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " has " + std::to_string(x.numel()) +
                     " elements, target " + shape_string(shape) + " does not");
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (should_record<T>({&x})) {
    record<T>("reshape", out, {&x}, [x, node = out.node()]() mutable {
      const auto& g = node->grad;
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  if (order.size() != in.size()) {
    throw ShapeError("permute: order has " + std::to_string(order.size()) + " axes for " + shape_string(in));
  }
  std::vector<bool> used(in.size(), false);
  for (std::size_t ax : order) {
    if (ax >= in.size() || used[ax]) throw ShapeError("permute: invalid axis order for " + shape_string(in));
    used[ax] = true;
  }
  Shape out_shape(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) out_shape[d] = in[order[d]];
  // Output index walks row-major; source position advances by the input
  // stride of the axis that output axis d came from.
  const auto in_strides = strides_of(in);
  std::vector<std::size_t> src_strides(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) src_strides[d] = in_strides[order[d]];
  const std::size_t n = x.numel();
  std::vector<std::size_t> map(n);
  {
    std::vector<std::size_t> idx(in.size(), 0);
    std::size_t pos = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
      map[flat] = pos;
      for (std::size_t d = in.size(); d-- > 0;) {
        ++idx[d];
        pos += src_strides[d];
        if (idx[d] < out_shape[d]) break;
        pos -= src_strides[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  Tensor<T> out(out_shape);
  const auto xv = x.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = xv[map[i]];
  if (should_record<T>({&x})) {
    record<T>("permute", out, {&x}, [x, map = std::move(map), node = out.node()]() mutable {
      const auto& g = node->grad;
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[map[i]] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError("concat: " + shape_string(s) + " incompatible with " + shape_string(first));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  Tensor<T> out(out_shape);
  T* op = out.data().data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t row = p.dim(axis) * inner;
    const T* src = p.data().data();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * row, row, op + o * out_row + offset);
    offset += row;
  }

  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any && Tape<T>::active() != nullptr) {
    std::vector<std::optional<std::size_t>> ids;
    for (const auto& p : parts) ids.push_back(p.tape_id());
    out.set_requires_grad(true);
    Tape<T>::active()->record("concat", std::move(ids), out.node(),
                              [parts, axis, outer, inner, out_row, node = out.node()]() mutable {
                                const T* g = node->grad.data();
                                std::size_t offset = 0;
                                for (auto& p : parts) {
                                  const std::size_t row = p.dim(axis) * inner;
                                  if (p.requires_grad()) {
                                    T* gp = p.grad_buffer().data();
                                    for (std::size_t o = 0; o < outer; ++o) {
                                      const T* src = g + o * out_row + offset;
                                      T* dst = gp + o * row;
                                      for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
                                    }
                                  }
                                  offset += row;
                                }
                              });
  }
  return out;
}

// -------------------------------------------------------------- normalization

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, Tensor<T>& running_mean,
                     Tensor<T>& running_var, BatchNormOptions options) {
  if (x.rank() < 2) throw ShapeError("batch_norm: expected [B,C,...], got " + shape_string(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  for (const Tensor<T>* t : {&scale, &shift, &std::as_const(running_mean), &std::as_const(running_var)}) {
    if (t->numel() != channels) {
      throw ShapeError("batch_norm: per-channel tensor " + shape_string(t->shape()) + " does not match " +
                       shape_string(x.shape()));
    }
  }
  const std::size_t spatial = x.numel() / (batch * channels);
  const std::size_t count = batch * spatial;

  std::vector<T> inv_std(channels);
  std::vector<T> xhat(x.numel());
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  T* op = out.data().data();
  const auto sc = scale.data();
  const auto sh = shift.data();
  for (std::size_t c = 0; c < channels; ++c) {
    double mu, var;
    if (options.training) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = xp + (b * channels + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) acc += p[s];
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = xp + (b * channels + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          const double d = p[s] - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      const double m = options.momentum;
      running_mean[c] = static_cast<T>((1.0 - m) * running_mean[c] + m * mu);
      running_var[c] = static_cast<T>((1.0 - m) * running_var[c] + m * unbiased);
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    const T is = static_cast<T>(1.0 / std::sqrt(var + options.eps));
    inv_std[c] = is;
    const T m = static_cast<T>(mu);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const T h = (xp[base + s] - m) * is;
        xhat[base + s] = h;
        op[base + s] = h * sc[c] + sh[c];
      }
    }
  }

  if (should_record<T>({&x, &scale, &shift})) {
    record<T>("batch_norm", out, {&x, &scale, &shift},
              [x, scale, shift, xhat = std::move(xhat), inv_std = std::move(inv_std), training = options.training,
               batch, channels, spatial, count, node = out.node()]() mutable {
                const T* g = node->grad.data();
                const auto sc = std::as_const(scale).data();
                std::vector<T> sum_g(channels, T{0}), sum_gx(channels, T{0});
                for (std::size_t c = 0; c < channels; ++c) {
                  for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t base = (b * channels + c) * spatial;
                    for (std::size_t s = 0; s < spatial; ++s) {
                      sum_g[c] += g[base + s];
                      sum_gx[c] += g[base + s] * xhat[base + s];
                    }
                  }
                }
                if (scale.requires_grad()) {
                  auto gs = scale.grad_buffer();
                  for (std::size_t c = 0; c < channels; ++c) gs[c] += sum_gx[c];
                }
                if (shift.requires_grad()) {
                  auto gs = shift.grad_buffer();
                  for (std::size_t c = 0; c < channels; ++c) gs[c] += sum_g[c];
                }
                if (!x.requires_grad()) return;
                T* gx = x.grad_buffer().data();
                const T n = static_cast<T>(count);
                for (std::size_t c = 0; c < channels; ++c) {
                  const T k = sc[c] * inv_std[c];
                  for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t base = (b * channels + c) * spatial;
                    if (training) {
                      const T kn = k / n;
                      for (std::size_t s = 0; s < spatial; ++s) {
                        gx[base + s] += kn * (n * g[base + s] - sum_g[c] - xhat[base + s] * sum_gx[c]);
                      }
                    } else {
                      for (std::size_t s = 0; s < spatial; ++s) gx[base + s] += k * g[base + s];
                    }
                  }
                }
              });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (scale.numel() != d || shift.numel() != d) {
    throw ShapeError("layer_norm: scale/shift " + shape_string(scale.shape()) + " do not match " +
                     shape_string(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  T* op = out.data().data();
  const auto sc = scale.data();
  const auto sh = shift.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xp + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    const T is = static_cast<T>(1.0 / std::sqrt(var + eps));
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - static_cast<T>(mu)) * is;
      xhat[r * d + i] = h;
      op[r * d + i] = h * sc[i] + sh[i];
    }
  }
  if (should_record<T>({&x, &scale, &shift})) {
    record<T>("layer_norm", out, {&x, &scale, &shift},
              [x, scale, shift, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d,
               node = out.node()]() mutable {
                const T* g = node->grad.data();
                const auto sc = std::as_const(scale).data();
                if (scale.requires_grad()) {
                  auto gs = scale.grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < d; ++i) gs[i] += g[r * d + i] * xhat[r * d + i];
                }
                if (shift.requires_grad()) {
                  auto gs = shift.grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < d; ++i) gs[i] += g[r * d + i];
                }
                if (!x.requires_grad()) return;
                T* gx = x.grad_buffer().data();
                const T n = static_cast<T>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                  T sum_dh{0}, sum_dhx{0};
                  for (std::size_t i = 0; i < d; ++i) {
                    const T dh = g[r * d + i] * sc[i];
                    sum_dh += dh;
                    sum_dhx += dh * xhat[r * d + i];
                  }
                  const T k = inv_std[r] / n;
                  for (std::size_t i = 0; i < d; ++i) {
                    const T dh = g[r * d + i] * sc[i];
                    gx[r * d + i] += k * (n * dh - sum_dh - xhat[r * d + i] * sum_dhx);
                  }
                }
              });
  }
  return out;
}

#define CROSSGAZE_INSTANTIATE_OPS(T)                                                                      \
  template Tensor<T> elementwise<T>(BinaryOp, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> elementwise<T>(BinaryOp, const Tensor<T>&, T);                                       \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, Conv2dOptions);                        \
  template Tensor<T> reduce<T>(ReduceOp, const Tensor<T>&, std::vector<std::size_t>, bool);               \
  template Tensor<T> activation<T>(Activation, const Tensor<T>&);                                         \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                                           \
  template Tensor<T> clamp_min<T>(const Tensor<T>&, T);                                                   \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                 \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);                       \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                               \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,      \
                                   Tensor<T>&, BatchNormOptions);                                         \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);

CROSSGAZE_INSTANTIATE_OPS(float)
CROSSGAZE_INSTANTIATE_OPS(double)

}  // namespace crossgaze
