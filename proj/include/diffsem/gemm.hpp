#pragma once

#include <cblas.h>

namespace diffsem {

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
/// Dispatches to OpenBLAS; both precisions are needed because gradient
/// checks run the whole stack in double.
template <typename S>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, S alpha, const S* a,
          int lda, const S* b, int ldb, S beta, S* c, int ldc);

template <>
inline void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                        const float* a, int lda, const float* b, int ldb, float beta,
                        float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

template <>
inline void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                         const double* a, int lda, const double* b, int ldb, double beta,
                         double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
              beta, c, ldc);
}

}  // namespace diffsem
