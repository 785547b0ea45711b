#pragma once

#include <cstddef>
#include <vector>

namespace wrel::nn {

// Row-major dense kernels. Every inner loop is an axpy over a contiguous
// row so the compiler can vectorize without reassociating reductions.

/// C (m x n) += A (m x k) * B (k x n)
template <typename T>
void gemm_nn(int m, int n, int k, const T* __restrict a, const T* __restrict b, T* __restrict c) {
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::size_t>(i) * k + p];
      if (av == T(0)) continue;
      const T* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// C (m x n) += A^T * B with A stored (k x m), B (k x n)
template <typename T>
void gemm_tn(int m, int n, int k, const T* __restrict a, const T* __restrict b, T* __restrict c) {
  for (int p = 0; p < k; ++p) {
    const T* bp = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T av = a[static_cast<std::size_t>(p) * m + i];
      if (av == T(0)) continue;
      T* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <typename T>
void transpose(int rows, int cols, const T* __restrict src, T* __restrict dst) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

/// C (m x n) += A (m x k) * B^T with B stored (n x k)
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c) {
  std::vector<T> bt(static_cast<std::size_t>(k) * n);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c);
}

}  // namespace wrel::nn
