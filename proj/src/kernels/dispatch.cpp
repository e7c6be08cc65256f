#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <vector>

#include "bms/errors.hpp"
#include "bms/kernels/kernels.hpp"

namespace bms::kernels {

#ifndef BMS_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(__x86_64__) || defined(__i386__)
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa detect_best_isa() { return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar; }

namespace {

const KernelTable* table_for(Isa isa) { return isa == Isa::Avx2 ? avx2_table() : &scalar_table(); }

Isa initial_isa() {
  if (const char* env = std::getenv("BMS_ISA")) {
    const std::string v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
  }
  return detect_best_isa();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{table_for(initial_isa())};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) throw DomainError("kernel ISA '" + std::string(isa_name(isa)) + "' is not supported here");
  current().store(table_for(isa), std::memory_order_release);
}

Isa active_isa() { return active().isa; }

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  constexpr std::size_t block = 16;
  for (std::size_t i0 = 0; i0 < rows; i0 += block)
    for (std::size_t j0 = 0; j0 < cols; j0 += block)
      for (std::size_t i = i0; i < std::min(rows, i0 + block); ++i)
        for (std::size_t j = j0; j < std::min(cols, j0 + block); ++j) out[j * rows + i] = in[i * cols + j];
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
  active().gemm_nn(m, n, k, a, k, b, n, c, n, accumulate);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  transpose(n, k, b, bt.data());
  active().gemm_nn(m, n, k, a, k, bt.data(), n, c, n, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c, bool accumulate) {
  thread_local std::vector<double> at;
  at.resize(k * m);
  transpose(k, m, a, at.data());
  active().gemm_nn(m, n, k, at.data(), k, b, n, c, n, accumulate);
}

}  // namespace bms::kernels
