#include <algorithm>
#include <cmath>

#include "bms/kernels/kernels.hpp"

namespace bms::kernels {
namespace {

void gemm_nn_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                    std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * lda;
    double* ci = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * b[p * ldb + j];
      ci[j] = accumulate ? ci[j] + s : s;
    }
  }
}

double dot_scalar(std::size_t n, const double* x, const double* y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void adam_update_scalar(std::size_t n, double* params, const double* grads, double* m, double* v,
                        const AdamCoefficients& c) {
  const bool clip = c.clip > 0.0;
  for (std::size_t i = 0; i < n; ++i) {
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

void squared_distances_scalar(std::size_t count, std::size_t dim, const double* centers, const double* x,
                              double* out) {
  for (std::size_t j = 0; j < count; ++j) {
    const double* cj = centers + j * dim;
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double diff = cj[i] - x[i];
      s += diff * diff;
    }
    out[j] = s;
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::Scalar,       &gemm_nn_scalar,         &dot_scalar, &axpy_scalar,
                                 &adam_update_scalar, &squared_distances_scalar};
  return table;
}

}  // namespace bms::kernels
