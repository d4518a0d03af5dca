#include "crossgaze/tensor/gemm.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace crossgaze {
namespace {

// Register tile: MR rows of A against NR columns of B (two vector registers per
// row on AVX-512 for float, two for double as well).
template <typename T>
struct Tile {
  static constexpr std::size_t mr = 8;
  static constexpr std::size_t nr = 128 / sizeof(T);
  static constexpr std::size_t kc = 256;
  static constexpr std::size_t mc = mr * 16;
  static constexpr std::size_t nc = nr * 64;
};

// Computes an R x C corner of a packed MR x NR tile; R and C shrink for edge
// tiles so that narrow or short operands do not pay for the padding.
template <typename T, std::size_t MR, std::size_t NR, std::size_t R, std::size_t C>
inline void micro_kernel(std::size_t kc, const T* __restrict pa, const T* __restrict pb, T* __restrict c,
                         std::size_t ldc, std::size_t rows, std::size_t cols) {
  T acc[R][C] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const T* bp = pb + p * NR;
    const T* ap = pa + p * MR;
#pragma GCC unroll 8
    for (std::size_t i = 0; i < R; ++i) {
      const T av = ap[i];
#pragma GCC unroll 32
      for (std::size_t j = 0; j < C; ++j) acc[i][j] += av * bp[j];
    }
  }
  if (rows == R && cols == C) {
    for (std::size_t i = 0; i < R; ++i) {
      T* row = c + i * ldc;
      for (std::size_t j = 0; j < C; ++j) row[j] += acc[i][j];
    }
  } else {
    for (std::size_t i = 0; i < rows; ++i) {
      T* row = c + i * ldc;
      for (std::size_t j = 0; j < cols; ++j) row[j] += acc[i][j];
    }
  }
}

template <typename T>
void tile_kernel(std::size_t kc, const T* pa, const T* pb, T* c, std::size_t ldc, std::size_t rows,
                 std::size_t cols) {
  constexpr std::size_t MR = Tile<T>::mr, NR = Tile<T>::nr;
  if (rows <= MR / 2) {
    if (cols <= NR / 2) {
      micro_kernel<T, MR, NR, MR / 2, NR / 2>(kc, pa, pb, c, ldc, rows, cols);
    } else {
      micro_kernel<T, MR, NR, MR / 2, NR>(kc, pa, pb, c, ldc, rows, cols);
    }
  } else if (cols <= NR / 2) {
    micro_kernel<T, MR, NR, MR, NR / 2>(kc, pa, pb, c, ldc, rows, cols);
  } else {
    micro_kernel<T, MR, NR, MR, NR>(kc, pa, pb, c, ldc, rows, cols);
  }
}

// Packs a kc x nc block of op(B) into NR-wide column panels, k-major.
template <typename T>
void pack_b(Trans trans, const T* b, std::size_t ldb, std::size_t k0, std::size_t j0, std::size_t kc,
            std::size_t nc, T* out) {
  constexpr std::size_t NR = Tile<T>::nr;
  for (std::size_t jp = 0; jp < nc; jp += NR) {
    const std::size_t cols = std::min(NR, nc - jp);
    T* panel = out + jp * kc;
    if (trans == Trans::no) {
      for (std::size_t p = 0; p < kc; ++p) {
        const T* src = b + (k0 + p) * ldb + j0 + jp;
        T* dst = panel + p * NR;
        std::size_t j = 0;
        for (; j < cols; ++j) dst[j] = src[j];
        for (; j < NR; ++j) dst[j] = T{0};
      }
    } else {
      for (std::size_t j = 0; j < NR; ++j) {
        if (j < cols) {
          const T* src = b + (j0 + jp + j) * ldb + k0;
          for (std::size_t p = 0; p < kc; ++p) panel[p * NR + j] = src[p];
        } else {
          for (std::size_t p = 0; p < kc; ++p) panel[p * NR + j] = T{0};
        }
      }
    }
  }
}

// Packs an mc x kc block of op(A) into MR-tall row panels, k-major.
template <typename T>
void pack_a(Trans trans, const T* a, std::size_t lda, std::size_t i0, std::size_t k0, std::size_t mc,
            std::size_t kc, T* out) {
  constexpr std::size_t MR = Tile<T>::mr;
  for (std::size_t ip = 0; ip < mc; ip += MR) {
    const std::size_t rows = std::min(MR, mc - ip);
    T* panel = out + ip * kc;
    if (trans == Trans::no) {
      for (std::size_t i = 0; i < MR; ++i) {
        if (i < rows) {
          const T* src = a + (i0 + ip + i) * lda + k0;
          for (std::size_t p = 0; p < kc; ++p) panel[p * MR + i] = src[p];
        } else {
          for (std::size_t p = 0; p < kc; ++p) panel[p * MR + i] = T{0};
        }
      }
    } else {
      for (std::size_t p = 0; p < kc; ++p) {
        const T* src = a + (k0 + p) * lda + i0 + ip;
        T* dst = panel + p * MR;
        std::size_t i = 0;
        for (; i < rows; ++i) dst[i] = src[i];
        for (; i < MR; ++i) dst[i] = T{0};
      }
    }
  }
}

// C += A.B^T for very short A: every output is a dot product of two
// contiguous rows, so no packing is needed. Lane-wise partial sums keep the
// reduction vectorizable and its order fixed.
template <typename T>
void gemm_short_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                   std::size_t ldb, T* c, std::size_t ldc) {
  constexpr std::size_t L = 64 / sizeof(T);
  constexpr std::size_t MAXM = 8;
  for (std::size_t j = 0; j < n; ++j) {
    const T* bj = b + j * ldb;
    T acc[MAXM][L] = {};
    std::size_t p = 0;
    for (; p + L <= k; p += L) {
      for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * lda + p;
        for (std::size_t l = 0; l < L; ++l) acc[i][l] += ai[l] * bj[p + l];
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      T sum{0};
      for (std::size_t l = 0; l < L; ++l) sum += acc[i][l];
      for (std::size_t q = p; q < k; ++q) sum += a[i * lda + q] * bj[q];
      c[i * ldc + j] += sum;
    }
  }
}

}  // namespace

template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  using Tl = Tile<T>;
  if (beta != T{0} && beta != T{1}) throw std::invalid_argument("gemm: beta must be 0 or 1");
  if (beta == T{0}) {
    for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T{0});
  }
  if (m == 0 || n == 0 || k == 0) return;
  if (trans_a == Trans::no && trans_b == Trans::yes && m <= Tl::mr && k >= 4 * n) {
    gemm_short_nt(m, n, k, a, lda, b, ldb, c, ldc);
    return;
  }

  thread_local std::vector<T> packed_a;
  thread_local std::vector<T> packed_b;
  packed_a.resize(Tl::mc * Tl::kc);
  packed_b.resize(Tl::nc * Tl::kc);

  for (std::size_t j0 = 0; j0 < n; j0 += Tl::nc) {
    const std::size_t nc = std::min(Tl::nc, n - j0);
    for (std::size_t k0 = 0; k0 < k; k0 += Tl::kc) {
      const std::size_t kc = std::min(Tl::kc, k - k0);
      pack_b(trans_b, b, ldb, k0, j0, kc, nc, packed_b.data());
      for (std::size_t i0 = 0; i0 < m; i0 += Tl::mc) {
        const std::size_t mc = std::min(Tl::mc, m - i0);
        pack_a(trans_a, a, lda, i0, k0, mc, kc, packed_a.data());
        for (std::size_t jp = 0; jp < nc; jp += Tl::nr) {
          const std::size_t cols = std::min(Tl::nr, nc - jp);
          for (std::size_t ip = 0; ip < mc; ip += Tl::mr) {
            const std::size_t rows = std::min(Tl::mr, mc - ip);
            tile_kernel<T>(kc, packed_a.data() + ip * kc, packed_b.data() + jp * kc, c + (i0 + ip) * ldc + j0 + jp,
                           ldc, rows, cols);
          }
        }
      }
    }
  }
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*, std::size_t,
                          const float*, std::size_t, float, float*, std::size_t);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                           const double*, std::size_t, double, double*, std::size_t);

}  // namespace crossgaze
