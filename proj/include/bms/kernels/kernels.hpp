#pragma once

// Data-parallel inner loops used by the network, optimizer and metrics.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2/FMA variant compiled in its own translation unit. The variant is chosen
// once at runtime from CPUID (overridable through BMS_ISA=scalar|avx2 or
// set_isa()). The AVX2 variants are tested for equivalence against the scalar
// ones; kernels that avoid FMA (adam_update) are bitwise identical.

#include <cstddef>
#include <string_view>

namespace bms::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);

struct AdamCoefficients {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double bias_correction1 = 1.0;  // 1 - beta1^step
  double bias_correction2 = 1.0;  // 1 - beta2^step
  double weight_decay = 0.0;      // decoupled (AdamW)
  double clip = 1.0;              // element-wise value clip on gradients; <= 0 disables
};

struct KernelTable {
  Isa isa;
  /// C[m x n] = A[m x k] * B[k x n], or C += A*B when accumulate is set. Row-major with leading dimensions.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
  double (*dot)(std::size_t n, const double* x, const double* y);
  /// y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  void (*adam_update)(std::size_t n, double* params, const double* grads, double* m, double* v,
                      const AdamCoefficients& coeff);
  /// out[j] = || centers[j, :] - x ||^2 for j < count; centers is count x dim row-major.
  void (*squared_distances)(std::size_t count, std::size_t dim, const double* centers, const double* x, double* out);
};

const KernelTable& scalar_table();
/// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table();

bool isa_supported(Isa isa);
Isa detect_best_isa();

/// Table used by the library. Resolved on first use.
const KernelTable& active();
/// Force a kernel set (tests, benchmarking). Throws DomainError if unsupported on this CPU.
void set_isa(Isa isa);
Isa active_isa();

// Convenience wrappers over the active table.

/// C[m x n] = A[m x k] * B[n x k]^T  (+C when accumulate). Contiguous row-major operands.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);
/// C[m x n] = A[k x m]^T * B[k x n]  (+C when accumulate). Contiguous row-major operands.
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);
/// C[m x n] = A[m x k] * B[k x n]  (+C when accumulate). Contiguous row-major operands.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate);

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out);

}  // namespace bms::kernels
