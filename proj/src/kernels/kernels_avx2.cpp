// Compiled with -mavx2 -mfma; only reached through the dispatch table after a
// CPUID check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "bms/kernels/kernels.hpp"

namespace bms::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// 4 x 8 register tile: C[i..i+3, j..j+7] over the full k range.
inline void tile_4x8(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc, bool accumulate) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    __m256d av = _mm256_broadcast_sd(a + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a + lda + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a + 2 * lda + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a + 3 * lda + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  auto store = [&](double* dst, __m256d v0, __m256d v1) {
    if (accumulate) {
      v0 = _mm256_add_pd(_mm256_loadu_pd(dst), v0);
      v1 = _mm256_add_pd(_mm256_loadu_pd(dst + 4), v1);
    }
    _mm256_storeu_pd(dst, v0);
    _mm256_storeu_pd(dst + 4, v1);
  };
  store(c, c00, c01);
  store(c + ldc, c10, c11);
  store(c + 2 * ldc, c20, c21);
  store(c + 3 * ldc, c30, c31);
}

// One row of C, 4 columns at a time, scalar tail.
inline void row_kernel(std::size_t n0, std::size_t n, std::size_t k, const double* a, const double* b,
                       std::size_t ldb, double* c, bool accumulate) {
  std::size_t j = n0;
  for (; j + 4 <= n; j += 4) {
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) acc = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), _mm256_loadu_pd(b + p * ldb + j), acc);
    if (accumulate) acc = _mm256_add_pd(_mm256_loadu_pd(c + j), acc);
    _mm256_storeu_pd(c + j, acc);
  }
  for (; j < n; ++j) {
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s = std::fma(a[p], b[p * ldb + j], s);
    c[j] = accumulate ? c[j] + s : s;
  }
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  const std::size_t n8 = n - n % 8;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t j = 0; j < n8; j += 8) tile_4x8(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    if (n8 < n) {
      for (std::size_t r = 0; r < 4; ++r) row_kernel(n8, n, k, a + (i + r) * lda, b, ldb, c + (i + r) * ldc, accumulate);
    }
  }
  for (; i < m; ++i) row_kernel(0, n, k, a + i * lda, b, ldb, c + i * ldc, accumulate);
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
  __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), a1);
  }
  for (; i + 4 <= n; i += 4) a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
  double s = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

// No FMA here: every operation is a correctly rounded IEEE op in the same
// order as the scalar loop, so results are bitwise identical.
void adam_update_avx2(std::size_t n, double* params, const double* grads, double* m, double* v,
                      const AdamCoefficients& c) {
  const bool clip = c.clip > 0.0;
  const __m256d lo = _mm256_set1_pd(-c.clip), hi = _mm256_set1_pd(c.clip);
  const __m256d b1 = _mm256_set1_pd(c.beta1), b2 = _mm256_set1_pd(c.beta2);
  const __m256d ob1 = _mm256_set1_pd(1.0 - c.beta1), ob2 = _mm256_set1_pd(1.0 - c.beta2);
  const __m256d bc1 = _mm256_set1_pd(c.bias_correction1), bc2 = _mm256_set1_pd(c.bias_correction2);
  const __m256d eps = _mm256_set1_pd(c.eps), wd = _mm256_set1_pd(c.weight_decay);
  const __m256d lr = _mm256_set1_pd(c.learning_rate);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d g = _mm256_loadu_pd(grads + i);
    if (clip) g = _mm256_min_pd(_mm256_max_pd(g, lo), hi);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(ob1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(ob2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_div_pd(mi, bc1);
    const __m256d vhat = _mm256_div_pd(vi, bc2);
    const __m256d p = _mm256_loadu_pd(params + i);
    const __m256d step = _mm256_add_pd(_mm256_div_pd(mhat, _mm256_add_pd(_mm256_sqrt_pd(vhat), eps)), _mm256_mul_pd(wd, p));
    _mm256_storeu_pd(params + i, _mm256_sub_pd(p, _mm256_mul_pd(lr, step)));
  }
  for (; i < n; ++i) {
    double g = grads[i];
    if (clip) g = std::min(std::max(g, -c.clip), c.clip);
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * (g * g);
    const double mhat = m[i] / c.bias_correction1;
    const double vhat = v[i] / c.bias_correction2;
    const double step = mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * params[i];
    params[i] -= c.learning_rate * step;
  }
}

void squared_distances_avx2(std::size_t count, std::size_t dim, const double* centers, const double* x, double* out) {
  for (std::size_t j = 0; j < count; ++j) {
    const double* cj = centers + j * dim;
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= dim; i += 4) {
      const __m256d diff = _mm256_sub_pd(_mm256_loadu_pd(cj + i), _mm256_loadu_pd(x + i));
      acc = _mm256_fmadd_pd(diff, diff, acc);
    }
    double s = hsum(acc);
    for (; i < dim; ++i) {
      const double diff = cj[i] - x[i];
      s = std::fma(diff, diff, s);
    }
    out[j] = s;
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{Isa::Avx2,       &gemm_nn_avx2,         &dot_avx2, &axpy_avx2,
                                 &adam_update_avx2, &squared_distances_avx2};
  return &table;
}

}  // namespace bms::kernels
