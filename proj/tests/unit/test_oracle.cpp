#include <cmath>
#include <vector>

#include "bms/oracle.hpp"
#include "bms/reference.hpp"
#include "doctest.h"
#include "testing.hpp"

using namespace bms;
using namespace bms::oracle;

namespace {

GaussianPair pair1d(const NoiseSchedule& s, double mu0 = 0.5, double s0 = 1.5, double muT = -1.0, double sT = 0.7) {
  return {Vec{mu0}, s0, Vec{muT}, sT, s, 0.0};
}

std::vector<NoiseSchedule> schedules() {
  return {NoiseSchedule::constant(1.0), NoiseSchedule::constant(2.5), NoiseSchedule::geometric(0.5, 1.5),
          NoiseSchedule::edm_ve(0.05, 3.0, 3.0)};
}

}  // namespace

TEST_CASE("marginal endpoints") {
  for (const auto& s : schedules()) {
    const auto p = pair1d(s);
    const auto m0 = gaussian_marginal(p, 0.0), mT = gaussian_marginal(p, s.horizon());
    CHECK(m0.mean[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m0.var == doctest::Approx(2.25).epsilon(1e-15));
    CHECK(mT.mean[0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(mT.var == doctest::Approx(0.49).epsilon(1e-15));
  }
}

TEST_CASE("marginal moments match composed draws") {
  Rng rng(1);
  const auto s = NoiseSchedule::geometric(0.5, 1.5);
  const auto p = pair1d(s);
  const auto prior = p.prior();
  const auto target = p.target();
  for (double t : {0.2, 0.5, 0.85}) {
    std::vector<double> xs(1000000);
    Vec x0(1), xT(1), xt(1);
    for (double& x : xs) {
      prior.sample(rng, x0);
      xT[0] = p.muT[0] + p.sT * rng.normal();
      reference::sample_bridge(s, x0, xT, t, rng, xt);
      x = xt[0];
    }
    const auto m = testing::moments(xs);
    const auto an = gaussian_marginal(p, t);
    CHECK(std::abs(m.mean - an.mean[0]) < 4 * m.se_mean());
    CHECK(std::abs(m.var - an.var) < 4 * m.se_var());
  }
}

TEST_CASE("Nelson relation holds exactly on a grid") {
  for (const auto& s : schedules()) {
    for (double C : {0.0, 0.4}) {
      auto p = pair1d(s);
      p.coupling_cov = C;
      double worst = 0.0;
      for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 50; ++j) {
          const Vec x{-4.0 + 8.0 * i / 49.0};
          const double t = s.horizon() * (0.01 + 0.98 * j / 49.0);
          const Vec u = gaussian_optimal_drift(p, x, t), v = gaussian_backward_drift(p, x, t);
          const Vec sc = gaussian_marginal_score(p, x, t);
          worst = std::max(worst, std::abs(u[0] + v[0] - s.sigma(t) * sc[0]));
        }
      CHECK(worst <= 1e-10);
    }
  }
}

TEST_CASE("marginal score matches finite differences of the marginal log-density") {
  const auto p = pair1d(NoiseSchedule::geometric(0.5, 1.5));
  for (double t : {0.1, 0.5, 0.9}) {
    auto f = [&](const Vec& x) { return gaussian_marginal_log_density(p, x, t); };
    const Vec x{0.3};
    CHECK(testing::rel_err(gaussian_marginal_score(p, x, t), testing::fd_gradient(f, x)) < 1e-7);
  }
}

TEST_CASE("symmetric pair has zero drifts at the origin") {
  const GaussianPair p{Vec{0.0, 0.0}, 1.3, Vec{0.0, 0.0}, 1.3, NoiseSchedule::constant(1.0), 0.0};
  for (double t : {0.1, 0.5, 0.9}) {
    CHECK(testing::norm(gaussian_optimal_drift(p, Vec{0.0, 0.0}, t)) == 0.0);
    CHECK(testing::norm(gaussian_backward_drift(p, Vec{0.0, 0.0}, t)) == 0.0);
  }
}

TEST_CASE("drifts are the conditional expectations of the transition scores") {
  // Regress sigma * grad log P_{T|t} and sigma * grad log P_{t|0} on X_t.
  Rng rng(2);
  for (double C : {0.0, 0.6}) {
    auto p = pair1d(NoiseSchedule::constant(1.2));
    p.coupling_cov = C;
    const auto& s = p.schedule;
    const double a2 = p.s0 * p.s0, b2 = p.sT * p.sT;
    for (double t : {0.25, 0.6}) {
      const std::size_t n = 400000;
      std::vector<double> xs(n), yu(n), yv(n);
      Vec x0(1), xT(1), xt(1);
      for (std::size_t k = 0; k < n; ++k) {
        // correlated endpoints with Cov = C
        const double z0 = rng.normal(), z1 = rng.normal();
        x0[0] = p.mu0[0] + p.s0 * z0;
        const double beta = C / a2;
        xT[0] = p.muT[0] + beta * (x0[0] - p.mu0[0]) + std::sqrt(b2 - C * C / a2) * z1;
        reference::sample_bridge(s, x0, xT, t, rng, xt);
        xs[k] = xt[0];
        yu[k] = s.sigma(t) * reference::score_T_given_t(s, xt, xT, t)[0];
        yv[k] = s.sigma(t) * reference::score_t_given_0(s, x0, xt, t)[0];
      }
      const auto fu = testing::fit_line(xs, yu), fv = testing::fit_line(xs, yv);
      const auto lu = gaussian_optimal_drift_coefficients(p, t), lv = gaussian_backward_drift_coefficients(p, t);
      CHECK(std::abs(fu.b1 - lu.slope) < 3 * fu.se1);
      CHECK(std::abs(fu.b0 - lu.offset[0]) < 3 * fu.se0);
      CHECK(std::abs(fv.b1 - lv.slope) < 3 * fv.se1);
      CHECK(std::abs(fv.b0 - lv.offset[0]) < 3 * fv.se0);
    }
  }
}

TEST_CASE("SB coupling: precision structure and marginals") {
  const auto p = pair1d(NoiseSchedule::geometric(0.5, 1.5));
  const auto sb = gaussian_sb(p);
  const double kT = p.schedule.kappa_total();
  CHECK(sb.L01 == doctest::Approx(-1.0 / kT).epsilon(1e-13));
  CHECK(sb.C > 0.0);
  // inverse of the precision reproduces the marginal variances
  const double det = sb.L00 * sb.L11 - sb.L01 * sb.L01;
  CHECK(sb.L11 / det == doctest::Approx(p.s0 * p.s0).epsilon(1e-12));
  CHECK(sb.L00 / det == doctest::Approx(p.sT * p.sT).epsilon(1e-12));
}

TEST_CASE("Markov SB drift equals the conditional-expectation drift of the SB coupling") {
  for (const auto& s : schedules()) {
    const auto p = with_sb_coupling(pair1d(s));
    for (double t : {0.0, 0.1, 0.5, 0.9, s.horizon()}) {
      for (double x : {-2.0, 0.0, 1.3}) {
        const Vec xv{x};
        CHECK(gaussian_sb_drift(p, xv, t)[0] ==
              doctest::Approx(gaussian_optimal_drift(p, xv, t)[0]).epsilon(1e-10).scale(1.0));
      }
    }
  }
}

TEST_CASE("SB corrector: Dirac prior reduces to the reference terminal score") {
  const auto s = NoiseSchedule::constant(1.5);
  const GaussianPair p{Vec{0.0}, 0.0, Vec{2.0}, 0.8, s, 0.0};
  const auto corr = gaussian_sb_corrector(p);
  for (double x : {-1.0, 0.5, 3.0}) {
    Vec out(1);
    corr(Vec{x}, out);
    CHECK(out[0] == doctest::Approx(-x / s.kappa_total()).epsilon(1e-13));
  }
  // small-but-positive prior scale approaches the same limit
  const GaussianPair q{Vec{0.0}, 1e-5, Vec{2.0}, 0.8, s, 0.0};
  Vec out(1);
  gaussian_sb_corrector(q)(Vec{1.0}, out);
  CHECK(out[0] == doctest::Approx(-1.0 / s.kappa_total()).epsilon(1e-6));
}

TEST_CASE("joint scores are gradients of the joint log-density") {
  auto p = with_sb_coupling(pair1d(NoiseSchedule::constant(1.0)));
  const double a2 = p.s0 * p.s0, b2 = p.sT * p.sT, C = p.coupling_cov, det = a2 * b2 - C * C;
  auto logpi = [&](double x0, double xT) {
    const double u = x0 - p.mu0[0], v = xT - p.muT[0];
    return -0.5 * (b2 * u * u - 2 * C * u * v + a2 * v * v) / det;
  };
  const auto s0 = joint_gaussian_score_0(p), sT = joint_gaussian_score_T(p);
  for (double x0 : {-1.0, 0.7})
    for (double xT : {-0.4, 2.0}) {
      Vec g0(1), gT(1);
      s0(Vec{x0}, Vec{xT}, g0);
      sT(Vec{x0}, Vec{xT}, gT);
      const double h = 1e-6;
      CHECK(g0[0] == doctest::Approx((logpi(x0 + h, xT) - logpi(x0 - h, xT)) / (2 * h)).epsilon(1e-7));
      CHECK(gT[0] == doctest::Approx((logpi(x0, xT + h) - logpi(x0, xT - h)) / (2 * h)).epsilon(1e-7));
    }
}
