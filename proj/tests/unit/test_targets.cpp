#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "bms/errors.hpp"
#include "bms/rng.hpp"
#include "bms/targets.hpp"
#include "doctest.h"
#include "testing.hpp"

using namespace bms;

namespace {

Vec random_vec(std::size_t d, Rng& rng, double scale) {
  Vec v(d);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

// Particles on a jittered cubic lattice with spacing ~1.1 so no pair gets close.
Vec lattice_config(std::size_t n, Rng& rng) {
  Vec x(3 * n);
  const std::size_t side = 3;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = i % side, b = (i / side) % side, c = i / (side * side);
    x[3 * i] = 1.1 * a + rng.uniform(-0.1, 0.1);
    x[3 * i + 1] = 1.1 * b + rng.uniform(-0.1, 0.1);
    x[3 * i + 2] = 1.1 * c + rng.uniform(-0.1, 0.1);
  }
  return x;
}

void check_score_fd(const TargetDensity& t, const Vec& x, double tol, double h = 1e-5) {
  auto f = [&](const Vec& y) { return t.log_rho(y); };
  const Vec fd = testing::fd_gradient(f, x, h);
  CHECK(testing::rel_err(t.score(x), fd, 1e-6) < tol);
}

}  // namespace

TEST_CASE("gmm single component score is mu - x") {
  Matrix mu(1, 3);
  mu.data = {1.0, -2.0, 0.5};
  GmmTarget g(mu);
  const Vec x{0.3, 0.1, -4.0};
  const Vec s = g.score(x);
  for (int i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(mu.data[i] - x[i]).epsilon(1e-14));
}

TEST_CASE("gmm symmetric pair has zero score at origin") {
  Matrix mu(2, 2);
  mu.data = {1.5, -0.7, -1.5, 0.7};
  GmmTarget g(mu);
  CHECK(testing::norm(g.score(Vec{0.0, 0.0})) < 1e-14);
}

TEST_CASE("gmm log_rho agrees with direct summation over components") {
  const auto g = gmm_target(20, 2, 20.0, 7);
  for (std::size_t k = 0; k < 20; ++k) {
    const auto x = g.means().row(k);
    long double sum = 0;
    for (std::size_t j = 0; j < 20; ++j) {
      long double q = 0;
      for (int i = 0; i < 2; ++i) q += std::pow(static_cast<long double>(x[i]) - g.means()(j, i), 2);
      sum += std::exp(-0.5L * q) / (2.0L * std::numbers::pi_v<long double>);
    }
    const double expected = static_cast<double>(std::log(sum / 20.0L));
    CHECK(std::abs(g.log_rho(x) - expected) < 1e-10);
  }
}

TEST_CASE("gmm means are uniform in the box and reproducible from the seed") {
  const auto a = gmm_target(40, 3, 4.0, 11), b = gmm_target(40, 3, 4.0, 11), c = gmm_target(40, 3, 4.0, 12);
  CHECK(a.means() == b.means());
  CHECK(!(a.means() == c.means()));
  for (double v : a.means().data) CHECK(std::abs(v) <= 4.0);
}

TEST_CASE("mode assignment: exact mean, tie rule, brute-force agreement") {
  Matrix mu(2, 1);
  mu.data = {-1.0, 1.0};
  GmmTarget pair(mu);
  CHECK(pair.mode_assignment(Vec{0.0}) == 0);
  CHECK(pair.mode_assignment(Vec{1.0}) == 1);

  const auto g = gmm_target(8, 3, 5.0, 3);
  for (std::size_t k = 0; k < 8; ++k) CHECK(g.mode_assignment(g.means().row(k)) == k);
  Rng rng(4);
  for (int n = 0; n < 10000; ++n) {
    const Vec x = random_vec(3, rng, 6.0);
    std::size_t best = 0;
    double best_p = -1.0;
    for (std::size_t k = 0; k < 8; ++k) {
      double q = 0;
      for (int i = 0; i < 3; ++i) q += std::pow(x[i] - g.means()(k, i), 2);
      const double p = (1.0 / 8.0) * std::exp(-0.5 * q) / std::pow(2 * std::numbers::pi, 1.5);
      if (p > best_p) {
        best_p = p;
        best = k;
      }
    }
    CHECK(g.mode_assignment(x) == best);
  }
}

TEST_CASE("gmm sampler mode weights are uniform within 4 SE") {
  Matrix mu(4, 2);
  mu.data = {-10, -10, -10, 10, 10, -10, 10, 10};
  GmmTarget g(mu);
  Rng rng(5);
  const std::size_t n = 100000;
  const Matrix s = g.sample(n, rng);
  std::vector<double> counts(4, 0.0);
  for (std::size_t r = 0; r < n; ++r) counts[g.mode_assignment(s.row(r))] += 1.0;
  const double se = std::sqrt(0.25 * 0.75 / n);
  for (double c : counts) CHECK(std::abs(c / n - 0.25) < 4 * se);
}

TEST_CASE("dw4 energy examples") {
  const Vec coincident(8, 0.3);
  CHECK(dw4_energy(coincident) == doctest::Approx(-18.6).epsilon(1e-14));
  // Four points cannot all be mutually at distance d0 in the plane; on a square
  // of side d0 the four edges vanish and only the two diagonals contribute.
  const double d0 = 1.0, r = std::sqrt(2.0) * d0 - d0;
  const Vec square{0, 0, d0, 0, d0, d0, 0, d0};
  CHECK(dw4_energy(square) == doctest::Approx(2 * (-4 * r * r + 0.9 * std::pow(r, 4))).epsilon(1e-14));
  // A single pair at d0 contributes nothing: move one particle far away along a line.
  Dw4Params p;
  p.d0 = 2.0;
  const Vec spread{0, 0, 2, 0, 4, 0, 6, 0};
  double expected = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      const double rr = 2.0 * (j - i) - 2.0;
      expected += -4 * rr * rr + 0.9 * std::pow(rr, 4);
    }
  CHECK(dw4_energy(spread, p) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("lj pair at r_m has energy -epsilon") {
  LjParams p;
  p.particles = 2;
  p.c_osc = 0.0;
  const Vec x{0, 0, 0, 1, 0, 0};
  CHECK(lj_energy(x, p).value == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(!lj_energy(x, p).singular);
}

TEST_CASE("lj coincident particles are flagged and clamped") {
  LjParams p;
  p.particles = 3;
  const Vec x{0, 0, 0, 0, 0, 0, 1, 1, 1};
  const auto e = lj_energy(x, p);
  CHECK(e.singular);
  CHECK(e.value == p.energy_clamp);
  LjTarget t(p);
  const Vec s = t.score(x);
  CHECK(testing::norm(s) <= p.score_clip * (1 + 1e-12));
  for (double v : s) CHECK(std::isfinite(v));
}

TEST_CASE("lj score is norm-clipped near a collision") {
  LjParams p;
  p.particles = 2;
  LjTarget t(p);
  const Vec x{0, 0, 0, 0.3, 0, 0};
  Vec raw(6);
  t.raw_score(x, raw);
  CHECK(testing::norm(raw) > p.score_clip);
  CHECK(testing::norm(t.score(x)) == doctest::Approx(p.score_clip).epsilon(1e-12));
}

TEST_CASE("particle energies are invariant under permutation, translation and rotation") {
  Rng rng(6);
  const Dw4Target dw;
  for (std::size_t n : {13u, 55u}) {
    LjParams p;
    p.particles = n;
    const LjTarget lj(p);
    const Vec x = lattice_config(n, rng);
    const double e = lj.energy(x);
    Vec perm = x;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::reverse(idx.begin(), idx.end());
    std::swap(idx[0], idx[n / 2]);
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) perm[3 * i + k] = x[3 * idx[i] + k];
    CHECK(std::abs(lj.energy(perm) - e) < 1e-10 * std::max(1.0, std::abs(e)));
    Vec tr = x;
    for (std::size_t i = 0; i < n; ++i) {
      tr[3 * i] += 3.7;
      tr[3 * i + 1] -= 1.2;
      tr[3 * i + 2] += 0.4;
    }
    CHECK(std::abs(lj.energy(tr) - e) < 1e-10 * std::max(1.0, std::abs(e)));
    // rotation about the z axis, then about x
    const double a = 0.7, b = -1.3;
    Vec rot = x;
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = x[3 * i], y0 = x[3 * i + 1], z0 = x[3 * i + 2];
      const double x1 = std::cos(a) * x0 - std::sin(a) * y0, y1 = std::sin(a) * x0 + std::cos(a) * y0;
      rot[3 * i] = x1;
      rot[3 * i + 1] = std::cos(b) * y1 - std::sin(b) * z0;
      rot[3 * i + 2] = std::sin(b) * y1 + std::cos(b) * z0;
    }
    CHECK(std::abs(lj.energy(rot) - e) < 1e-10 * std::max(1.0, std::abs(e)));
  }
  const Vec x = random_vec(8, rng, 2.0);
  const double e = dw.energy(x);
  Vec perm{x[6], x[7], x[2], x[3], x[0], x[1], x[4], x[5]};
  CHECK(std::abs(dw.energy(perm) - e) < 1e-10);
  Vec tr = x;
  for (int i = 0; i < 4; ++i) {
    tr[2 * i] += 5.0;
    tr[2 * i + 1] -= 2.0;
  }
  CHECK(std::abs(dw.energy(tr) - e) < 1e-10);
}

TEST_CASE("scores equal finite-difference gradients on 200 random points") {
  Rng rng(7);
  const GaussianTarget gauss(Vec{1.0, -0.5, 2.0}, 1.7, 3.0);
  const auto gmm = gmm_target(6, 3, 3.0, 9);
  const Dw4Target dw;
  LjParams p13;
  p13.particles = 13;
  const LjTarget lj(p13);
  for (int n = 0; n < 200; ++n) {
    check_score_fd(gauss, random_vec(3, rng, 4.0), 1e-4);
    check_score_fd(gmm, random_vec(3, rng, 4.0), 1e-4);
    check_score_fd(dw, random_vec(8, rng, 2.5), 1e-4);
    // LJ gradients are steep; use its raw score and a looser tolerance per the contract.
    const Vec x = lattice_config(13, rng);
    auto f = [&](const Vec& y) { return lj.log_rho(y); };
    Vec raw(39);
    lj.raw_score(x, raw);
    CHECK(testing::rel_err(raw, testing::fd_gradient(f, x, 1e-6)) < 1e-3);
  }
}

TEST_CASE("gaussian target: score at mean, sampler moments, normalizer offset") {
  const GaussianTarget g(Vec{0.5, -1.0}, 2.0, -4.2);
  CHECK(testing::norm(g.score(Vec{0.5, -1.0})) == 0.0);
  CHECK(*g.log_normalizer() == -4.2);
  const GaussianTarget g0(Vec{0.5, -1.0}, 2.0, 0.0);
  CHECK(g.log_rho(Vec{3.0, 1.0}) - g0.log_rho(Vec{3.0, 1.0}) == doctest::Approx(-4.2).epsilon(1e-14));
  Rng rng(8);
  const Matrix s = g.sample(100000, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> col(s.rows);
    for (std::size_t r = 0; r < s.rows; ++r) col[r] = s(r, i);
    const auto m = testing::moments(col);
    CHECK(std::abs(m.mean - g.mean()[i]) < 4 * m.se_mean());
    CHECK(std::abs(m.var - 4.0) < 4 * m.se_var());
  }
  // off-diagonal covariance ~ 0
  double cov = 0.0;
  for (std::size_t r = 0; r < s.rows; ++r) cov += (s(r, 0) - 0.5) * (s(r, 1) + 1.0);
  cov /= s.rows;
  CHECK(std::abs(cov) < 4 * 4.0 / std::sqrt(static_cast<double>(s.rows)));
}

TEST_CASE("targets without a sampler say so") {
  Rng rng(9);
  CHECK_THROWS_AS(Dw4Target().sample(3, rng), UnsupportedCouplingError);
}

TEST_CASE("prior distributions") {
  Rng rng(10);
  const auto g = PriorDistribution::gaussian(Vec{1.0, 2.0}, 0.5);
  CHECK(g.score(Vec{1.0, 2.0}) == Vec{0.0, 0.0});
  auto f = [&](const Vec& y) { return g.log_density(y); };
  CHECK(testing::rel_err(g.score(Vec{0.3, 2.4}), testing::fd_gradient(f, Vec{0.3, 2.4})) < 1e-6);
  const auto d = PriorDistribution::dirac(Vec{1.0, -1.0});
  CHECK(d.is_dirac());
  const Matrix s = d.sample(5, rng);
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(s(r, 0) == 1.0);
    CHECK(s(r, 1) == -1.0);
  }
  CHECK_THROWS_AS(d.log_density(Vec{1.0, -1.0}), UnsupportedCouplingError);
  CHECK_THROWS_AS(d.score(Vec{1.0, -1.0}), UnsupportedCouplingError);
}
