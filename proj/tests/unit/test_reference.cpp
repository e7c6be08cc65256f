#include <cmath>
#include <vector>

#include "bms/errors.hpp"
#include "bms/reference.hpp"
#include "bms/rng.hpp"
#include "doctest.h"
#include "testing.hpp"

using namespace bms;
namespace ref = bms::reference;

namespace {

std::vector<NoiseSchedule> schedules() {
  return {NoiseSchedule::constant(2.5), NoiseSchedule::constant(1.0, 3.0), NoiseSchedule::geometric(0.5, 1.5),
          NoiseSchedule::geometric(0.05, 2.0, 0.7), NoiseSchedule::edm_ve(0.001, 6.0, 3.0)};
}

Vec random_vec(std::size_t d, Rng& rng, double scale = 2.0) {
  Vec v(d);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

TEST_CASE("sample_bridge pins endpoints") {
  Rng rng(1);
  const auto s = NoiseSchedule::geometric(0.5, 1.5);
  const Vec x0{1.0, -2.0}, xT{0.5, 3.0};
  CHECK(ref::sample_bridge(s, x0, xT, 0.0, rng) == x0);
  CHECK(ref::sample_bridge(s, x0, xT, 1.0, rng) == xT);
}

TEST_CASE("sample_bridge variance at midpoint of unit Brownian bridge") {
  Rng rng(2);
  const auto s = NoiseSchedule::constant(1.0);
  const Vec z{0.0};
  std::vector<double> xs(100000);
  for (double& x : xs) x = ref::sample_bridge(s, z, z, 0.5, rng)[0];
  const auto m = testing::moments(xs);
  CHECK(std::abs(m.var - 0.25) < 0.01);
  CHECK(std::abs(m.mean) < 4 * m.se_mean());
}

TEST_CASE("sample_bridge moments match closed forms within 4 SE") {
  Rng rng(3);
  for (const auto& s : schedules()) {
    const Vec x0{1.5, -0.5}, xT{-2.0, 0.25};
    const double t = 0.3 * s.horizon();
    const double g = s.gamma(t);
    const double var = s.kappa_total() * g * (1 - g);
    for (std::size_t i = 0; i < 2; ++i) {
      std::vector<double> xs(100000);
      for (double& x : xs) x = ref::sample_bridge(s, x0, xT, t, rng)[i];
      const auto m = testing::moments(xs);
      CHECK(std::abs(m.mean - ((1 - g) * x0[i] + g * xT[i])) < 4 * m.se_mean());
      CHECK(std::abs(m.var - var) < 4 * m.se_var());
    }
  }
}

TEST_CASE("score examples and singular times") {
  const auto s = NoiseSchedule::constant(1.0);
  const Vec x0{0.0, 0.0}, xt{2.0, 0.0};
  CHECK(ref::score_t_given_0(s, x0, xt, 1.0) == Vec{-2.0, 0.0});
  CHECK(ref::score_t_given_0(s, x0, x0, 0.5) == Vec{0.0, 0.0});
  CHECK(ref::score_T_given_t(s, xt, xt, 0.5) == Vec{0.0, 0.0});
  CHECK(ref::score_T_given_t(s, x0, xt, 0.0) == Vec{2.0, 0.0});
  CHECK(ref::brownian_bridge_drift(s, Vec{0.0, 0.0}, Vec{1.0, 0.0}, 0.0) == Vec{1.0, 0.0});
  CHECK(ref::brownian_bridge_drift(s, xt, xt, 0.3) == Vec{0.0, 0.0});

  const Vec xT{1.0, 1.0};
  const double g = s.gamma(0.4);
  const Vec mean{(1 - g) * x0[0] + g * xT[0], (1 - g) * x0[1] + g * xT[1]};
  CHECK(testing::norm(ref::score_bridge(s, x0, xT, mean, 0.4)) < 1e-15);

  CHECK_THROWS_AS(ref::score_t_given_0(s, x0, xt, 0.0), SingularTimeError);
  CHECK_THROWS_AS(ref::score_t_given_0(s, x0, xt, 5e-10), SingularTimeError);
  CHECK_THROWS_AS(ref::score_T_given_t(s, x0, xt, 1.0), SingularTimeError);
  CHECK_THROWS_AS(ref::score_bridge(s, x0, xT, xt, 0.0), SingularTimeError);
  CHECK_THROWS_AS(ref::score_bridge(s, x0, xT, xt, 1.0), SingularTimeError);
  CHECK_THROWS_AS(ref::brownian_bridge_drift(s, x0, xT, 1.0), SingularTimeError);
}

TEST_CASE("score decompositions hold on random tuples") {
  Rng rng(4);
  const auto sch = schedules();
  double worst = 0.0;
  for (int n = 0; n < 10000; ++n) {
    const auto& s = sch[n % sch.size()];
    const std::size_t d = 1 + n % 4;
    const Vec x0 = random_vec(d, rng), xT = random_vec(d, rng), xt = random_vec(d, rng);
    // Absolute error only makes sense where the scores are moderate; the EDM
    // schedule's kappa(T) - kappa(t) shrinks to ~1e-9 near T.
    double t;
    do {
      t = s.horizon() * rng.uniform(0.0, 1.0);
    } while (s.gamma(t) < 1e-3 || s.one_minus_gamma(t) < 1e-3);
    const double g = s.gamma(t), kT = s.kappa_total();
    const Vec b = ref::score_bridge(s, x0, xT, xt, t);
    const Vec sT = ref::score_T_given_t(s, xt, xT, t);
    const Vec s0 = ref::score_t_given_0(s, x0, xt, t);
    for (std::size_t i = 0; i < d; ++i) {
      worst = std::max(worst, std::abs(sT[i] - ((xT[i] - x0[i]) / kT + g * b[i])));
      worst = std::max(worst, std::abs(s0[i] - ((1 - g) * b[i] - (xT[i] - x0[i]) / kT)));
    }
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("scores equal finite-difference gradients of log-densities") {
  Rng rng(5);
  for (const auto& s : schedules()) {
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t d = 3;
      const Vec x0 = random_vec(d, rng), xT = random_vec(d, rng), xt = random_vec(d, rng);
      const double t = s.horizon() * rng.uniform(0.05, 0.95);
      auto f0 = [&](const Vec& x) { return ref::log_density_t_given_0(s, x0, x, t); };
      auto fT = [&](const Vec& x) { return ref::log_density_T_given_t(s, x, xT, t); };
      auto fb = [&](const Vec& x) { return ref::log_density_bridge(s, x0, xT, x, t); };
      CHECK(testing::rel_err(ref::score_t_given_0(s, x0, xt, t), testing::fd_gradient(f0, xt, 1e-5)) < 1e-5);
      CHECK(testing::rel_err(ref::score_T_given_t(s, xt, xT, t), testing::fd_gradient(fT, xt, 1e-5)) < 1e-5);
      CHECK(testing::rel_err(ref::score_bridge(s, x0, xT, xt, t), testing::fd_gradient(fb, xt, 1e-5)) < 1e-5);
    }
  }
}

TEST_CASE("Euler simulation with the bridge drift is pinned to xT") {
  // dX = drift dt + sigma dB from x0; the pinned process is a Brownian bridge,
  // so at t = 0.5 its mean is the bridge mean and at the last grid step it sits near xT.
  Rng rng(6);
  const auto s = NoiseSchedule::constant(1.0);
  const int steps = 1000, paths = 4000;
  const double dt = 1.0 / steps;
  const Vec x0{0.0}, xT{1.0};
  std::vector<double> mid(paths), last(paths);
  for (int p = 0; p < paths; ++p) {
    Vec x = x0;
    for (int k = 0; k < steps - 1; ++k) {
      const double t = k * dt;
      const double drift = ref::brownian_bridge_drift(s, x, xT, t)[0];
      x[0] += drift * dt + s.sigma(t) * std::sqrt(dt) * rng.normal();
      if (k + 1 == steps / 2) mid[p] = x[0];
    }
    last[p] = x[0];
  }
  const auto mm = testing::moments(mid);
  CHECK(std::abs(mm.mean - 0.5) < 3 * mm.se_mean());
  CHECK(std::abs(mm.var - 0.25) < 4 * mm.se_var());
  const auto ml = testing::moments(last);
  CHECK(std::abs(ml.mean - 1.0) < 3 * ml.se_mean());
}
