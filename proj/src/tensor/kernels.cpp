#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

// This file is compiled with -ffp-contract=off: every multiply-add below is
// either an explicit fused operation or an explicit multiply then add, so
// vector lanes and scalar tails round identically.

namespace embedpipe::kernels {

namespace {

inline double madd(double a, double b, double c) {
#if defined(__FMA__)
  return std::fma(a, b, c);
#else
  return a * b + c;
#endif
}

#if defined(__AVX512F__)

// Rows [i, i+R) x columns [j, j+16) of C, full contraction over k.
template <int R>
inline void tile16(const double* a, const double* b, double* c, std::size_t k, std::size_t n, std::size_t i,
                   std::size_t j, __mmask8 m0, __mmask8 m1, bool accumulate) {
  __m512d acc0[R], acc1[R];
  for (int r = 0; r < R; ++r) {
    double* cr = c + (i + r) * n + j;
    acc0[r] = accumulate ? _mm512_maskz_loadu_pd(m0, cr) : _mm512_setzero_pd();
    acc1[r] = accumulate ? _mm512_maskz_loadu_pd(m1, cr + 8) : _mm512_setzero_pd();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * n + j;
    const __m512d b0 = _mm512_maskz_loadu_pd(m0, bp);
    const __m512d b1 = _mm512_maskz_loadu_pd(m1, bp + 8);
    for (int r = 0; r < R; ++r) {
      const __m512d av = _mm512_set1_pd(a[(i + r) * k + p]);
      acc0[r] = _mm512_fmadd_pd(av, b0, acc0[r]);
      acc1[r] = _mm512_fmadd_pd(av, b1, acc1[r]);
    }
  }
  for (int r = 0; r < R; ++r) {
    double* cr = c + (i + r) * n + j;
    _mm512_mask_storeu_pd(cr, m0, acc0[r]);
    _mm512_mask_storeu_pd(cr + 8, m1, acc1[r]);
  }
}

inline __mmask8 lane_mask(std::size_t count) {
  return count >= 8 ? __mmask8(0xff) : __mmask8((1u << count) - 1u);
}

#endif

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
#if defined(__AVX512F__)
  for (std::size_t j = 0; j < n; j += 16) {
    const std::size_t width = std::min<std::size_t>(16, n - j);
    const __mmask8 m0 = lane_mask(width);
    const __mmask8 m1 = width > 8 ? lane_mask(width - 8) : __mmask8(0);
    std::size_t i = 0;
    for (; i + 6 <= m; i += 6) tile16<6>(a, b, c, k, n, i, j, m0, m1, accumulate);
    for (; i < m; ++i) tile16<1>(a, b, c, k, n, i, j, m0, m1, accumulate);
  }
#else
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      const double x = ai[p];
      for (std::size_t j = 0; j < n; ++j) ci[j] = madd(x, bp[j], ci[j]);
    }
  }
#endif
}

void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> at(k * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  gemm_nn(at.data(), b, c, k, m, n, /*accumulate=*/true);
}

void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(a, bt.data(), c, m, n, k, /*accumulate=*/true);
}

}  // namespace embedpipe::kernels
