#pragma once
// Dense double-precision kernels behind a runtime-selected dispatch table.
//
// Every kernel has a portable scalar reference implementation. When the
// library is built with RRHF_ENABLE_AVX2 and the CPU reports AVX2+FMA, the
// vectorised table is selected instead. The environment variable
// RRHF_KERNELS=scalar|avx2|auto overrides the choice at startup.
//
// All matrices are row-major with explicit leading dimensions so callers can
// address column blocks (attention heads) without copying.

#include <cstddef>
#include <string_view>

namespace rrhf::kernels {

struct KernelTable {
  const char* name;

  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc);

  double (*dot)(std::size_t n, const double* x, const double* y);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  // y += x
  void (*add)(std::size_t n, const double* x, double* y);
};

const KernelTable& scalar_table();

// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table();

bool cpu_has_avx2_fma();

// The table used by the rest of the library.
const KernelTable& active();

// Forces a table by name ("scalar", "avx2", "auto"). Returns false when the
// requested variant is unavailable on this build or CPU.
bool select(std::string_view name);

}  // namespace rrhf::kernels
