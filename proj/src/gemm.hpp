#pragma once

#include <cstddef>

// Row-major kernels used by convolution. Each output element accumulates its
// products in a fixed order, so results do not depend on scheduling.
namespace unetseg::detail {

/// C[m x n] += A[m x k] * B[k x n]
template <typename Real>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* __restrict a,
             const Real* __restrict b, Real* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* __restrict crow = c + i * n;
    const Real* __restrict arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      const Real* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C[m x n] += A^T * B with A stored [k x m] and B [k x n].
template <typename Real>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* __restrict a,
             const Real* __restrict b, Real* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* __restrict crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[p * m + i];
      const Real* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace unetseg::detail
