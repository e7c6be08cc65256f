#include <cmath>
#include <vector>

#include "bms/kernels/kernels.hpp"
#include "bms/rng.hpp"
#include "doctest.h"

using namespace bms::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, bms::Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Plain triple loop in long double as the reference product.
std::vector<double> naive_gemm(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                               const std::vector<double>& b) {
  std::vector<double> c(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<double>(s);
    }
  return c;
}

std::vector<const KernelTable*> tables() {
  std::vector<const KernelTable*> t{&scalar_table()};
  if (isa_supported(Isa::Avx2)) t.push_back(avx2_table());
  return t;
}

}  // namespace

TEST_CASE("gemm_nn matches naive product for awkward shapes") {
  bms::Rng rng(1);
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 8, 3}, {9, 17, 13}, {16, 16, 16}, {33, 65, 31}, {5, 130, 2}};
  for (const auto* tab : tables()) {
    for (const auto& sh : shapes) {
      const std::size_t m = sh[0], n = sh[1], k = sh[2];
      auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
      auto ref = naive_gemm(m, n, k, a, b);
      std::vector<double> c(m * n, 0.5);
      tab->gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);
      for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-13));
      std::vector<double> acc(m * n, 0.5);
      tab->gemm_nn(m, n, k, a.data(), k, b.data(), n, acc.data(), n, true);
      for (std::size_t i = 0; i < c.size(); ++i) CHECK(acc[i] == doctest::Approx(ref[i] + 0.5).epsilon(1e-13));
    }
  }
}

TEST_CASE("transposed wrappers agree with explicit transposes") {
  bms::Rng rng(2);
  const std::size_t m = 7, n = 11, k = 5;
  auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
  auto ref = naive_gemm(m, n, k, a, b);
  std::vector<double> bt(n * k), at(k * m), c(m * n);
  transpose(k, n, b.data(), bt.data());
  transpose(m, k, a.data(), at.data());
  gemm_nt(m, n, k, a.data(), bt.data(), c.data(), false);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  gemm_tn(m, n, k, at.data(), b.data(), c.data(), false);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-13));
}

TEST_CASE("avx2 kernels agree with scalar reference") {
  if (!isa_supported(Isa::Avx2)) return;
  const auto& s = scalar_table();
  const auto& v = *avx2_table();
  bms::Rng rng(3);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 64u, 1001u}) {
    auto x = random_vec(n, rng), y = random_vec(n, rng);
    CHECK(v.dot(n, x.data(), y.data()) == doctest::Approx(s.dot(n, x.data(), y.data())).epsilon(1e-13));
    auto y1 = y, y2 = y;
    s.axpy(n, 0.37, x.data(), y1.data());
    v.axpy(n, 0.37, x.data(), y2.data());
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-15));
  }
  for (std::size_t dim : {1u, 2u, 5u, 8u, 16u}) {
    auto centers = random_vec(9 * dim, rng), x = random_vec(dim, rng);
    std::vector<double> o1(9), o2(9);
    s.squared_distances(9, dim, centers.data(), x.data(), o1.data());
    v.squared_distances(9, dim, centers.data(), x.data(), o2.data());
    for (std::size_t j = 0; j < 9; ++j) CHECK(o1[j] == doctest::Approx(o2[j]).epsilon(1e-14));
  }
}

TEST_CASE("adam update is bitwise identical across ISAs") {
  if (!isa_supported(Isa::Avx2)) return;
  bms::Rng rng(4);
  const std::size_t n = 1027;
  auto p1 = random_vec(n, rng), g = random_vec(n, rng);
  for (double& x : g) x *= 3.0;  // exercise clipping
  auto p2 = p1;
  std::vector<double> m1(n), v1(n), m2(n), v2(n);
  AdamCoefficients c;
  c.learning_rate = 1e-3;
  c.weight_decay = 1e-2;
  for (int step = 1; step <= 5; ++step) {
    c.bias_correction1 = 1.0 - std::pow(c.beta1, step);
    c.bias_correction2 = 1.0 - std::pow(c.beta2, step);
    scalar_table().adam_update(n, p1.data(), g.data(), m1.data(), v1.data(), c);
    avx2_table()->adam_update(n, p2.data(), g.data(), m2.data(), v2.data(), c);
  }
  CHECK(p1 == p2);
  CHECK(m1 == m2);
  CHECK(v1 == v2);
}

TEST_CASE("set_isa switches the active table") {
  const Isa before = active_isa();
  set_isa(Isa::Scalar);
  CHECK(active_isa() == Isa::Scalar);
  set_isa(before);
  CHECK(active_isa() == before);
}
