#pragma once

#include <cstddef>

namespace embedpipe::kernels {

// Row-major dense products. Each output element accumulates its terms in
// increasing order of the contracted index, independent of the row count, so
// results for a row do not depend on which other rows share the call.

/// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
/// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n);
/// C[m,k] += A[m,n] * B[k,n]^T
void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
                 std::size_t k);

}  // namespace embedpipe::kernels
