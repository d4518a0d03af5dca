#pragma once

#include <cstddef>

namespace crossgaze {

enum class Trans { no, yes };

/// C[M x N] = beta * C + op(A)[M x K] * op(B)[K x N], all row-major.
///
/// Packed, cache-blocked, single-threaded. The summation order depends only on
/// (M, N, K), so results are bit-reproducible for identical inputs. beta must
/// be 0 (overwrite) or 1 (accumulate).
template <typename T>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc);

}  // namespace crossgaze
