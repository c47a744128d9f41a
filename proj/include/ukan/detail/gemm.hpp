#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

namespace ukan::detail {

// C[m x n] (+)= op(A) * op(B), row-major with explicit leading dimensions.
// op(A) is m x k, op(B) is k x n. Each output element is accumulated over k in
// increasing order regardless of m, n or blocking, so results for a given row
// do not depend on how many other rows are computed alongside it.

template <class T>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(32)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(32)));
};
template <class T>
using Vec = typename VecOf<T>::type;

template <class T>
inline Vec<T> load_vec(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <class T>
inline void store_vec(T* p, const Vec<T>& v) {
  std::memcpy(p, &v, sizeof(v));
}

// Accumulates an MR x (2 vectors) tile of C in registers over one k block.
template <class T, std::size_t MR>
inline void micro_tile(std::size_t pk, const T* a, std::size_t a_row, std::size_t a_col,
                       const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  constexpr std::size_t W = sizeof(Vec<T>) / sizeof(T);
  Vec<T> acc0[MR], acc1[MR];
  for (std::size_t r = 0; r < MR; ++r) {
    acc0[r] = load_vec<T>(c + r * ldc);
    acc1[r] = load_vec<T>(c + r * ldc + W);
  }
  for (std::size_t p = 0; p < pk; ++p) {
    const Vec<T> b0 = load_vec<T>(b + p * ldb);
    const Vec<T> b1 = load_vec<T>(b + p * ldb + W);
    for (std::size_t r = 0; r < MR; ++r) {
      const T av = a[r * a_row + p * a_col];
      acc0[r] += av * b0;
      acc1[r] += av * b1;
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    store_vec<T>(c + r * ldc, acc0[r]);
    store_vec<T>(c + r * ldc + W, acc1[r]);
  }
}

template <class T>
void gemm_nn_kernel(std::size_t m, std::size_t n, std::size_t k, const T* a,
                    std::size_t a_row, std::size_t a_col, const T* b,
                    std::size_t ldb, T* c, std::size_t ldc) {
  constexpr std::size_t kMR = 4;
  constexpr std::size_t kNR = 64 / sizeof(T);  // two 256-bit vectors
  constexpr std::size_t kBlockK = 256;
  std::vector<T> panel(kBlockK * kNR);
  for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
    const std::size_t pk = std::min(kBlockK, k - p0);
    const T* ak = a + p0 * a_col;
    const T* bk = b + p0 * ldb;
    std::size_t j = 0;
    for (; j + kNR <= n; j += kNR) {
      // Pack the k block of this column panel contiguously; it is reused by
      // every row tile.
      for (std::size_t p = 0; p < pk; ++p)
        std::memcpy(panel.data() + p * kNR, bk + p * ldb + j, kNR * sizeof(T));
      std::size_t i = 0;
      for (; i + kMR <= m; i += kMR)
        micro_tile<T, kMR>(pk, ak + i * a_row, a_row, a_col, panel.data(), kNR, c + i * ldc + j, ldc);
      for (; i < m; ++i)
        micro_tile<T, 1>(pk, ak + i * a_row, a_row, a_col, panel.data(), kNR, c + i * ldc + j, ldc);
    }
    if (j < n) {
      const std::size_t nj = n - j;
      for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * ldc + j;
        for (std::size_t p = 0; p < pk; ++p) {
          const T av = ak[i * a_row + p * a_col];
          const T* bp = bk + p * ldb + j;
          for (std::size_t q = 0; q < nj; ++q) ci[q] += av * bp[q];
        }
      }
    }
  }
}

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T{0});
  }
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<T> b_t;
  if (trans_b) {
    // B is stored n x k; materialise k x n so the inner loop stays unit-stride.
    b_t.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) b_t[p * n + j] = b[j * ldb + p];
    b = b_t.data();
    ldb = n;
  }
  const std::size_t a_row = trans_a ? 1 : lda;
  const std::size_t a_col = trans_a ? lda : 1;
  gemm_nn_kernel(m, n, k, a, a_row, a_col, b, ldb, c, ldc);
}

}  // namespace ukan::detail
