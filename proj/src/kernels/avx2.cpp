// AVX2 + FMA variants. Compiled with -mavx2 -mfma; only reached through the
// dispatch table after a CPUID check.
//
// Each output element is produced by the same sequence of operations no matter
// how the surrounding loop is blocked (row tails use the one-row kernel, column
// tails use std::fma), so a row's result never depends on how many rows share
// the call. The causal-mask and padding invariants of the model rely on this.

#include <immintrin.h>

#include <cmath>

#include "rrhf/kernels/kernels.hpp"

namespace rrhf::kernels {
namespace {

// --- C += A * B -------------------------------------------------------------

template <int Rows>
inline void nn_block(std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                     std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d acc[Rows][2];
    for (int r = 0; r < Rows; ++r) {
      acc[r][0] = _mm256_loadu_pd(c + r * ldc + j);
      acc[r][1] = _mm256_loadu_pd(c + r * ldc + j + 4);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
      const __m256d b1 = _mm256_loadu_pd(b + p * ldb + j + 4);
      for (int r = 0; r < Rows; ++r) {
        const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
        acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
      }
    }
    for (int r = 0; r < Rows; ++r) {
      _mm256_storeu_pd(c + r * ldc + j, acc[r][0]);
      _mm256_storeu_pd(c + r * ldc + j + 4, acc[r][1]);
    }
  }
  for (; j + 4 <= n; j += 4) {
    __m256d acc[Rows];
    for (int r = 0; r < Rows; ++r) acc[r] = _mm256_loadu_pd(c + r * ldc + j);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
      for (int r = 0; r < Rows; ++r) {
        acc[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + r * lda + p), b0, acc[r]);
      }
    }
    for (int r = 0; r < Rows; ++r) _mm256_storeu_pd(c + r * ldc + j, acc[r]);
  }
  for (; j < n; ++j) {
    for (int r = 0; r < Rows; ++r) {
      double s = c[r * ldc + j];
      for (std::size_t p = 0; p < k; ++p) s = std::fma(a[r * lda + p], b[p * ldb + j], s);
      c[r * ldc + j] = s;
    }
  }
}

// One row, streamed over k. Each element still sees fma(a[p], b[p][j], acc)
// for p = 0..k-1 in order, so results equal nn_block's bit for bit; this
// order just avoids a k-long dependency chain per register.
inline void nn_row(std::size_t n, std::size_t k, const double* a, const double* b, std::size_t ldb, double* c) {
  const std::size_t nv = n & ~std::size_t{3};
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p);
    const double* brow = b + p * ldb;
    for (std::size_t j = 0; j < nv; j += 4) {
      _mm256_storeu_pd(c + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(c + j)));
    }
  }
  for (std::size_t j = nv; j < n; ++j) {
    double s = c[j];
    for (std::size_t p = 0; p < k; ++p) s = std::fma(a[p], b[p * ldb + j], s);
    c[j] = s;
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) nn_block<4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
  for (; i < m; ++i) nn_row(n, k, a + i * lda, b, ldb, c + i * ldc);
}

// --- C += A * B^T -----------------------------------------------------------

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d pair = _mm_add_pd(lo, hi);  // (l0+l2, l1+l3)
  return _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
}

// Four dot products against one row of A; each dot uses one accumulator so the
// result matches dot_one exactly.
inline void nt_four(std::size_t k, const double* arow, const double* b, std::size_t ldb,
                    double out[4]) {
  __m256d acc[4] = {_mm256_setzero_pd(), _mm256_setzero_pd(), _mm256_setzero_pd(),
                    _mm256_setzero_pd()};
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    const __m256d av = _mm256_loadu_pd(arow + p);
    for (int q = 0; q < 4; ++q) acc[q] = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + q * ldb + p), acc[q]);
  }
  for (int q = 0; q < 4; ++q) {
    double s = hsum(acc[q]);
    for (std::size_t t = p; t < k; ++t) s = std::fma(arow[t], b[q * ldb + t], s);
    out[q] = s;
  }
}

inline double dot_one(std::size_t k, const double* x, const double* y) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + p), _mm256_loadu_pd(y + p), acc);
  double s = hsum(acc);
  for (; p < k; ++p) s = std::fma(x[p], y[p], s);
  return s;
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      double out[4];
      nt_four(k, arow, b + j * ldb, ldb, out);
      for (int q = 0; q < 4; ++q) crow[j + q] += out[q];
    }
    for (; j < n; ++j) crow[j] += dot_one(k, arow, b + j * ldb);
  }
}

// --- C += A^T * B -----------------------------------------------------------

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d acc0 = _mm256_loadu_pd(crow + j);
      __m256d acc1 = _mm256_loadu_pd(crow + j + 4);
      __m256d acc2 = _mm256_loadu_pd(crow + j + 8);
      __m256d acc3 = _mm256_loadu_pd(crow + j + 12);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_broadcast_sd(a + p * lda + i);
        const double* brow = b + p * ldb + j;
        acc0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow), acc0);
        acc1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 4), acc1);
        acc2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 8), acc2);
        acc3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 12), acc3);
      }
      _mm256_storeu_pd(crow + j, acc0);
      _mm256_storeu_pd(crow + j + 4, acc1);
      _mm256_storeu_pd(crow + j + 8, acc2);
      _mm256_storeu_pd(crow + j + 12, acc3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d acc = _mm256_loadu_pd(crow + j);
      for (std::size_t p = 0; p < k; ++p) {
        acc = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p * lda + i), _mm256_loadu_pd(b + p * ldb + j), acc);
      }
      _mm256_storeu_pd(crow + j, acc);
    }
    for (; j < n; ++j) {
      double s = crow[j];
      for (std::size_t p = 0; p < k; ++p) s = std::fma(a[p * lda + i], b[p * ldb + j], s);
      crow[j] = s;
    }
  }
}

double dot(std::size_t n, const double* x, const double* y) { return dot_one(n, x, y); }

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void add(std::size_t n, const double* x, double* y) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) y[i] += x[i];
}

constexpr KernelTable kAvx2{"avx2", gemm_nn, gemm_nt, gemm_tn, dot, axpy, add};

}  // namespace

const KernelTable* avx2_table_impl() { return &kAvx2; }

}  // namespace rrhf::kernels
