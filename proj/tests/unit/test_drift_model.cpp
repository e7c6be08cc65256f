#include <cmath>
#include <vector>

#include "bms/drift_model.hpp"
#include "bms/errors.hpp"
#include "bms/kernels/kernels.hpp"
#include "doctest.h"
#include "testing.hpp"

using namespace bms;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double s = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.uniform(-s, s);
  return m;
}

Vec random_times(std::size_t n, Rng& rng) {
  Vec t(n);
  for (double& v : t) v = rng.uniform(0.0, 1.0);
  return t;
}

// Weighted squared loss with fixed random targets and weights.
struct QuadLoss {
  Matrix y;
  Vec w;
  double operator()(const Matrix& out, Matrix& g) const {
    double l = 0.0;
    for (std::size_t r = 0; r < out.rows; ++r)
      for (std::size_t j = 0; j < out.cols; ++j) {
        const double d = out(r, j) - y(r, j);
        l += 0.5 * w[r] * d * d;
        g(r, j) = w[r] * d;
      }
    return l;
  }
};

Architecture arch(std::size_t d, std::size_t width, std::size_t layers, std::size_t nf, Activation a,
                  std::size_t heads = 1) {
  Architecture ar;
  ar.state_dim = d;
  ar.width = width;
  ar.hidden_layers = layers;
  ar.n_freq = nf;
  ar.activation = a;
  ar.heads = heads;
  return ar;
}

}  // namespace

TEST_CASE("fourier embedding") {
  const Vec e0 = fourier_embed(0.0, 8);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(e0[k] == 0.0);
    CHECK(e0[8 + k] == 1.0);
  }
  const Vec e1 = fourier_embed(1.0, 8);
  for (std::size_t k = 0; k < 16; ++k) CHECK(e1[k] == doctest::Approx(e0[k]).epsilon(1e-12).scale(1.0));
  const Vec e = fourier_embed(0.3141, 64);
  CHECK(testing::norm(e) == doctest::Approx(8.0).epsilon(1e-14));
  const Vec e2 = fourier_embed(1.0, 4, 2.0);
  CHECK(e2[0] == doctest::Approx(0.0).scale(1.0));
  CHECK(e2[4] == doctest::Approx(-1.0));
}

TEST_CASE("fresh field outputs zero and is deterministic in the seed") {
  DriftField f(arch(3, 16, 3, 4, Activation::Gelu), 1);
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const Vec x{rng.normal(), rng.normal(), rng.normal()};
    CHECK(f.evaluate(x, rng.uniform()) == Vec(3, 0.0));
  }
  DriftField g(arch(3, 16, 3, 4, Activation::Gelu), 1);
  CHECK(f.parameters() == g.parameters());
  DriftField h(arch(3, 16, 3, 4, Activation::Gelu), 2);
  CHECK(f.parameters() != h.parameters());
  CHECK(f.parameters().size() == f.architecture().parameter_count());
}

TEST_CASE("hidden initialization is bounded by 1/sqrt(fan_in)") {
  DriftField f(arch(2, 32, 2, 4, Activation::Gelu), 3);
  const auto& p = f.parameters();
  const std::size_t in = 2 + 8;
  for (std::size_t i = 0; i < 32 * in; ++i) CHECK(std::abs(p[i]) <= 1.0 / std::sqrt(double(in)));
  for (std::size_t i = 32 * in; i < 32 * in + 32; ++i) CHECK(p[i] == 0.0);
}

TEST_CASE("batch evaluation equals per-sample evaluation") {
  DriftField f(arch(2, 24, 3, 5, Activation::Silu), 4);
  Rng rng(5);
  for (double& p : f.mutable_parameters()) p = rng.uniform(-0.5, 0.5);
  const Matrix x = random_matrix(37, 2, rng, 2.0);
  const Vec t = random_times(37, rng);
  Matrix out;
  f.evaluate(x, t, out);
  for (std::size_t r = 0; r < 37; ++r) {
    const Vec y = f.evaluate(x.row(r), t[r]);
    for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(y[j] - out(r, j)) <= 1e-12);
  }
}

TEST_CASE("constant loss has zero gradient") {
  DriftField f(arch(2, 8, 2, 2, Activation::Gelu), 6);
  Rng rng(7);
  const Matrix x = random_matrix(5, 2, rng);
  const Vec t = random_times(5, rng);
  Vec g;
  const double l = loss_and_gradient(
      f, x, t,
      [](const Matrix&, Matrix& go) {
        std::fill(go.data.begin(), go.data.end(), 0.0);
        return 3.0;
      },
      g);
  CHECK(l == 3.0);
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("linear field gradient matches the normal-equation form") {
  // out = W z + b with z = [x, embed(t)]; dL/dW = sum_r w_r (out_r - y_r) z_r^T.
  const auto a = arch(3, 0, 0, 2, Activation::Gelu);
  DriftField f(a, 8);
  Rng rng(9);
  for (double& p : f.mutable_parameters()) p = rng.normal();
  const std::size_t B = 11, in = a.input_dim();
  const Matrix x = random_matrix(B, 3, rng);
  const Vec t = random_times(B, rng);
  QuadLoss ql{random_matrix(B, 3, rng), Vec(B)};
  for (double& w : ql.w) w = rng.uniform(0.1, 2.0);
  Vec g;
  loss_and_gradient(f, x, t, ql, g);
  const auto& p = f.parameters();
  Vec gw(3 * in, 0.0), gb(3, 0.0);
  for (std::size_t r = 0; r < B; ++r) {
    Vec z(x.row(r).begin(), x.row(r).end());
    const Vec e = fourier_embed(t[r], 2);
    z.insert(z.end(), e.begin(), e.end());
    for (std::size_t j = 0; j < 3; ++j) {
      double o = p[3 * in + j];
      for (std::size_t i = 0; i < in; ++i) o += p[j * in + i] * z[i];
      const double res = ql.w[r] * (o - ql.y(r, j));
      for (std::size_t i = 0; i < in; ++i) gw[j * in + i] += res * z[i];
      gb[j] += res;
    }
  }
  for (std::size_t i = 0; i < gw.size(); ++i) CHECK(std::abs(g[i] - gw[i]) <= 1e-10);
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(g[3 * in + j] - gb[j]) <= 1e-10);
}

TEST_CASE("directional finite-difference gradient check across architectures") {
  const std::vector<Architecture> matrix = {
      arch(2, 16, 1, 3, Activation::Gelu), arch(2, 16, 3, 3, Activation::Gelu), arch(3, 12, 2, 4, Activation::Silu),
      arch(3, 12, 4, 2, Activation::Tanh), arch(2, 10, 2, 3, Activation::Gelu, 3), arch(4, 0, 0, 3, Activation::Gelu),
      arch(0, 8, 1, 4, Activation::Tanh)};
  Rng rng(10);
  for (auto a : matrix) {
    if (a.state_dim == 0) a.head_dim = 1;
    DriftField f(a, 11);
    for (double& p : f.mutable_parameters()) p = rng.uniform(-0.4, 0.4);
    const std::size_t B = 6, O = a.output_dim();
    const Matrix x = random_matrix(B, a.state_dim, rng);
    const Vec t = random_times(B, rng);
    QuadLoss ql{random_matrix(B, O, rng), Vec(B, 1.0)};
    Vec g;
    loss_and_gradient(f, x, t, ql, g);
    auto loss_at = [&](const Vec& params) {
      DriftField h(f);
      h.mutable_parameters() = params;
      Matrix out, go(B, O);
      h.forward(x, t, out);
      return ql(out, go);
    };
    const double h = 1e-5;
    for (int dir = 0; dir < 32; ++dir) {
      Vec v(g.size());
      for (double& e : v) e = rng.normal();
      Vec pp = f.parameters(), pm = f.parameters();
      for (std::size_t i = 0; i < v.size(); ++i) {
        pp[i] += h * v[i];
        pm[i] -= h * v[i];
      }
      const double fd = (loss_at(pp) - loss_at(pm)) / (2 * h);
      double an = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) an += g[i] * v[i];
      CHECK(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(an)));
    }
  }
}

TEST_CASE("input gradient matches finite differences") {
  DriftField f(arch(3, 12, 3, 3, Activation::Gelu, 2), 12);
  Rng rng(13);
  for (double& p : f.mutable_parameters()) p = rng.uniform(-0.5, 0.5);
  const std::size_t B = 4;
  const Matrix x = random_matrix(B, 3, rng);
  const Vec t = random_times(B, rng);
  QuadLoss ql{random_matrix(B, 6, rng), Vec(B, 1.0)};
  DriftField::Workspace ws;
  Matrix out, go(B, 6), gx;
  f.forward(x, t, out, ws);
  ql(out, go);
  Vec g;
  f.backward(go, ws, g, &gx);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t i = 0; i < 3; ++i) {
      Matrix xp = x, xm = x;
      xp(r, i) += 1e-6;
      xm(r, i) -= 1e-6;
      Matrix op, om, tmp(B, 6);
      f.forward(xp, t, op);
      f.forward(xm, t, om);
      const double fd = (ql(op, tmp) - ql(om, tmp)) / 2e-6;
      CHECK(gx(r, i) == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
    }
}

TEST_CASE("results do not depend on the kernel ISA beyond rounding") {
  if (!kernels::isa_supported(kernels::Isa::Avx2)) return;
  DriftField f(arch(4, 40, 3, 6, Activation::Gelu), 14);
  Rng rng(15);
  for (double& p : f.mutable_parameters()) p = rng.uniform(-0.3, 0.3);
  const Matrix x = random_matrix(33, 4, rng);
  const Vec t = random_times(33, rng);
  QuadLoss ql{random_matrix(33, 4, rng), Vec(33, 1.0)};
  const auto before = kernels::active_isa();
  kernels::set_isa(kernels::Isa::Scalar);
  Vec gs;
  const double ls = loss_and_gradient(f, x, t, ql, gs);
  kernels::set_isa(kernels::Isa::Avx2);
  Vec gv;
  const double lv = loss_and_gradient(f, x, t, ql, gv);
  kernels::set_isa(before);
  CHECK(lv == doctest::Approx(ls).epsilon(1e-12));
  CHECK(testing::rel_err(gv, gs) < 1e-12);
}

TEST_CASE("output scaling multiplies by sigma / sqrt(kappa) with the cutoff") {
  const auto s = NoiseSchedule::constant(2.0);
  DriftField f(arch(1, 4, 1, 1, Activation::Gelu), 16, OutputScaling{s, 1e-3});
  for (double& p : f.mutable_parameters()) p = 0.1;
  Matrix raw;
  const Matrix x(1, 1, 0.5);
  const double t0[1] = {0.25};
  f.forward(x, t0, raw);
  CHECK(f.evaluate(Vec{0.5}, 0.25)[0] == doctest::Approx(raw(0, 0) * 2.0 / std::sqrt(4.0 * 0.25)).epsilon(1e-14));
  const double tz[1] = {0.0};
  f.forward(x, tz, raw);
  CHECK(f.evaluate(Vec{0.5}, 0.0)[0] == doctest::Approx(raw(0, 0) * 2.0 / std::sqrt(4.0 * 1e-3)).epsilon(1e-14));
}

TEST_CASE("non-finite loss raises a divergence error carrying the last finite loss") {
  DriftField f(arch(2, 4, 1, 1, Activation::Gelu), 17);
  const Matrix x(2, 2, 0.0);
  const Vec t{0.1, 0.2};
  Vec g;
  try {
    loss_and_gradient(f, x, t, [](const Matrix&, Matrix&) { return std::nan(""); }, g, 0.75);
    FAIL("expected TrainingDivergenceError");
  } catch (const TrainingDivergenceError& e) {
    CHECK(e.last_finite_loss() == 0.75);
  }
}

TEST_CASE("NaN parameters poison the field") {
  DriftField f(arch(2, 4, 1, 1, Activation::Gelu), 18);
  f.mutable_parameters()[3] = std::nan("");
  CHECK_THROWS_AS(f.evaluate(Vec{0.0, 0.0}, 0.5), PoisonedStateError);
}

TEST_CASE("optimizer: zero gradient, first step, clipping") {
  OptimizerState s;
  s.learning_rate = 0.1;
  s.weight_decay = 0.0;
  Vec p{1.0, -2.0, 3.0};
  optimizer_step(s, p, Vec{0.0, 0.0, 0.0});
  CHECK(p == Vec{1.0, -2.0, 3.0});

  OptimizerState wd;
  wd.learning_rate = 0.1;
  wd.weight_decay = 0.5;
  Vec q{1.0, -2.0};
  optimizer_step(wd, q, Vec{0.0, 0.0});
  CHECK(q[0] == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0).epsilon(1e-15));
  CHECK(q[1] == doctest::Approx(-2.0 + 0.1 * 0.5 * 2.0).epsilon(1e-15));

  // First Adam step: m = (1-b1) g, v = (1-b2) g^2, mhat = g, vhat = g^2.
  OptimizerState a;
  a.learning_rate = 0.01;
  a.clip = 0.0;
  Vec r{0.5, 0.5};
  const Vec g{0.3, -2.0};
  optimizer_step(a, r, g);
  for (int i = 0; i < 2; ++i) {
    const double m = (1 - 0.9) * g[i], v = (1 - 0.999) * g[i] * g[i];
    const double expected = 0.5 - 0.01 * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
    CHECK(r[i] == doctest::Approx(expected).epsilon(1e-14));
  }

  OptimizerState c1, c2;
  Vec p1{0.1, 0.2, 0.3, 0.4, 0.5}, p2 = p1;
  const Vec big{10.0, -10.0, 10.0, 10.0, -10.0}, unit{1.0, -1.0, 1.0, 1.0, -1.0};
  for (int k = 0; k < 3; ++k) {
    optimizer_step(c1, p1, big);
    optimizer_step(c2, p2, unit);
  }
  CHECK(p1 == p2);
}

TEST_CASE("snapshot is a frozen deep copy") {
  DriftField f(arch(2, 6, 2, 2, Activation::Gelu), 19);
  Rng rng(20);
  for (double& p : f.mutable_parameters()) p = rng.uniform(-1, 1);
  const DriftField snap = f.snapshot();
  CHECK(snap.frozen());
  CHECK(snap.parameters() == f.parameters());
  const Vec before = f.evaluate(Vec{0.3, -0.2}, 0.4);
  f.mutable_parameters()[0] += 1.0;
  CHECK(snap.parameters() != f.parameters());
  CHECK(snap.evaluate(Vec{0.3, -0.2}, 0.4) == before);
  DriftField copy = snap;
  CHECK_THROWS_AS(copy.mutable_parameters(), Error);
  OptimizerState st;
  CHECK_THROWS_AS(optimizer_step(st, copy, Vec(copy.parameters().size(), 1.0)), Error);
}

TEST_CASE("training a one-hidden-layer field reduces the regression loss") {
  DriftField f(arch(1, 32, 1, 2, Activation::Gelu), 21);
  Rng rng(22);
  const std::size_t B = 128;
  const Matrix x = random_matrix(B, 1, rng, 2.0);
  const Vec t = random_times(B, rng);
  QuadLoss ql{Matrix(B, 1), Vec(B, 1.0 / B)};
  for (std::size_t r = 0; r < B; ++r) ql.y(r, 0) = std::sin(2 * x(r, 0)) + t[r];
  OptimizerState opt;
  opt.learning_rate = 3e-3;
  Vec g;
  double first = 0.0, best = 1e300;
  std::vector<double> best_at;
  for (int step = 0; step < 500; ++step) {
    const double l = loss_and_gradient(f, x, t, ql, g);
    if (step == 0) first = l;
    best = std::min(best, l);
    if (step % 100 == 99) best_at.push_back(best);
    optimizer_step(opt, f, g);
  }
  for (std::size_t i = 1; i < best_at.size(); ++i) CHECK(best_at[i] < best_at[i - 1]);
  CHECK(best < 0.2 * first);
}

TEST_CASE("control-variate net starts at c = gamma") {
  const auto s = NoiseSchedule::geometric(0.5, 1.5);
  ControlVariateNet cv(64, 8, 1.0, 23);
  for (double t : {0.0, 0.2, 0.5, 0.9, 1.0}) CHECK(cv.c(s, t) == doctest::Approx(s.gamma(t)).epsilon(1e-15));
  for (double& p : cv.field().mutable_parameters()) p = 0.3;
  CHECK(cv.c(s, 0.0) == 0.0);
  CHECK(cv.c(s, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cv.c(s, 0.5) != doctest::Approx(s.gamma(0.5)));
}
