#include "bms/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bms/couplings.hpp"
#include "bms/evaluate.hpp"
#include "bms/oracle.hpp"
#include "bms/reference.hpp"
#include "bms/trainer.hpp"

namespace bms::checks {

namespace {

using oracle::GaussianPair;

std::vector<NoiseSchedule> schedules(const Options& o) {
  std::vector<NoiseSchedule> v{NoiseSchedule::constant(2.5), NoiseSchedule::constant(1.0, 3.0),
                               NoiseSchedule::geometric(0.5, 1.5), NoiseSchedule::geometric(0.05, 2.0, 0.7),
                               NoiseSchedule::edm_ve(0.001, 6.0, 3.0)};
  if (o.kappa_fault != 0.0)
    for (auto& s : v) ScheduleTestAccess::inject_kappa_fault(s, o.kappa_fault);
  return v;
}

NoiseSchedule faulted(NoiseSchedule s, const Options& o) {
  if (o.kappa_fault != 0.0) ScheduleTestAccess::inject_kappa_fault(s, o.kappa_fault);
  return s;
}

GaussianPair pair(std::size_t d, const NoiseSchedule& s, double C = 0.0) {
  GaussianPair p{Vec(d), 1.5, Vec(d), 0.7, s, C};
  for (std::size_t i = 0; i < d; ++i) {
    p.mu0[i] = 0.5 - 0.3 * static_cast<double>(i);
    p.muT[i] = -1.0 + 0.6 * static_cast<double>(i);
  }
  return p;
}

// (x0, xT) from the isotropic Gaussian coupling with Cov = C, then xt from the bridge.
void draw(const GaussianPair& p, double t, Rng& rng, MSpan x0, MSpan xT, MSpan xt) {
  const double a2 = p.s0 * p.s0, b2 = p.sT * p.sT, C = p.coupling_cov;
  const double cond = std::sqrt(b2 - C * C / a2);
  for (std::size_t i = 0; i < p.dim(); ++i) {
    x0[i] = p.mu0[i] + p.s0 * rng.normal();
    xT[i] = p.muT[i] + (C / a2) * (x0[i] - p.mu0[i]) + cond * rng.normal();
  }
  reference::sample_bridge(p.schedule, x0, xT, t, rng, xt);
}

struct LineFit {
  double b0 = 0, b1 = 0, se0 = 0, se1 = 0;
};

// Streaming simple regression y = b0 + b1 x.
class LineAccumulator {
 public:
  void add(double x, double y) {
    ++n_;
    const double dx = x - mx_;
    mx_ += dx / n_;
    const double dy = y - my_;
    my_ += dy / n_;
    sxx_ += dx * (x - mx_);
    sxy_ += dx * (y - my_);
    syy_ += dy * (y - my_);
  }
  LineFit fit() const {
    LineFit f;
    f.b1 = sxy_ / sxx_;
    f.b0 = my_ - f.b1 * mx_;
    const double rss = std::max(0.0, syy_ - f.b1 * sxy_);
    const double s2 = rss / (n_ - 2.0);
    f.se1 = std::sqrt(s2 / sxx_);
    f.se0 = std::sqrt(s2 * (1.0 / n_ + mx_ * mx_ / sxx_));
    return f;
  }

 private:
  double n_ = 0, mx_ = 0, my_ = 0, sxx_ = 0, sxy_ = 0, syy_ = 0;
};

double zscore(double est, double truth, double se) { return std::abs(est - truth) / se; }

std::vector<double> solve(std::vector<double> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r * n + c]) > std::abs(A[piv * n + c])) piv = r;
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(A[c * n + k], A[piv * n + k]);
      std::swap(b[c], b[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r * n + c] / A[c * n + c];
      for (std::size_t k = c; k < n; ++k) A[r * n + k] -= f * A[c * n + k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= A[i * n + k] * x[k];
    x[i] = s / A[i * n + i];
  }
  return x;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(3);
  o << v;
  return o.str();
}

// ------------------------------------------------------------------ checks

Result score_decomposition(const Options& o) {
  Rng rng = Rng::derive(o.seed, 1);
  const auto sch = schedules(o);
  double worst = 0.0;
  for (int n = 0; n < 10000; ++n) {
    const auto& s = sch[n % sch.size()];
    const std::size_t d = 1 + n % 3;
    Vec x0(d), xT(d), xt(d);
    for (std::size_t i = 0; i < d; ++i) {
      x0[i] = rng.uniform(-2, 2);
      xT[i] = rng.uniform(-2, 2);
      xt[i] = rng.uniform(-2, 2);
    }
    double t;
    do {
      t = s.horizon() * rng.uniform(0.0, 1.0);
    } while (s.gamma(t) < 1e-3 || s.one_minus_gamma(t) < 1e-3);
    const double g = s.gamma(t), kT = s.kappa_total();
    const Vec b = reference::score_bridge(s, x0, xT, xt, t);
    const Vec sT = reference::score_T_given_t(s, xt, xT, t);
    const Vec s0 = reference::score_t_given_0(s, x0, xt, t);
    for (std::size_t i = 0; i < d; ++i) {
      worst = std::max(worst, std::abs(sT[i] - ((xT[i] - x0[i]) / kT + g * b[i])));
      worst = std::max(worst, std::abs(s0[i] - ((1 - g) * b[i] - (xT[i] - x0[i]) / kT)));
    }
  }
  Result r;
  r.value = worst;
  r.tolerance = 1e-10;
  r.pass = worst <= r.tolerance;
  r.detail = "10^4 tuples, 5 schedules (constant, geometric, EDM)";
  return r;
}

Result nelson(const Options& o) {
  double worst = 0.0;
  for (const auto& s : schedules(o))
    for (double C : {0.0, 0.4}) {
      const auto p = pair(1, s, C);
      for (int i = 0; i < 50; ++i)
        for (int j = 0; j < 50; ++j) {
          const Vec x{-4.0 + 8.0 * i / 49.0};
          const double t = s.horizon() * (0.01 + 0.98 * j / 49.0);
          const Vec u = oracle::gaussian_optimal_drift(p, x, t), v = oracle::gaussian_backward_drift(p, x, t);
          const Vec sc = oracle::gaussian_marginal_score(p, x, t);
          worst = std::max(worst, std::abs(u[0] + v[0] - s.sigma(t) * sc[0]));
        }
    }
  Result r;
  r.value = worst;
  r.tolerance = 1e-10;
  r.pass = worst <= r.tolerance;
  r.detail = "50x50 (x,t) grid, 5 schedules, independent and correlated couplings";
  return r;
}

Result target_score_identity(const Options& o) {
  Rng rng = Rng::derive(o.seed, 3);
  const auto s = faulted(NoiseSchedule::geometric(0.5, 1.5), o);
  const double t = 0.45;
  ControlVariateNet zero_net(32, 4, s.horizon(), 5);
  const std::vector<CvSchedule> cvs{CvSchedule::fixed_gamma(), CvSchedule::fixed_function([](double) { return 0.3; }),
                                    CvSchedule::learned(&zero_net)};
  const std::size_t n = 1000000;
  double worst = 0.0;
  for (std::size_t d = 1; d <= 3; ++d) {
    const auto p = pair(d, s);
    const auto prior = p.prior();
    const auto target = p.target();
    const auto m = oracle::gaussian_marginal(p, t);
    std::vector<CvCoefficients> a;
    for (const auto& cv : cvs) a.push_back(cv_coefficients(cv, s, t));
    std::vector<LineAccumulator> acc(cvs.size() * d);
    Vec x0(d), xT(d), xt(d), g0(d), gT(d);
    for (std::size_t k = 0; k < n; ++k) {
      draw(p, t, rng, x0, xT, xt);
      prior.score(x0, g0);
      target.score(xT, gT);
      for (std::size_t c = 0; c < cvs.size(); ++c)
        for (std::size_t i = 0; i < d; ++i) acc[c * d + i].add(xt[i], a[c].a0 * g0[i] + a[c].aT * gT[i]);
    }
    // grad log Pi_t(x)_i = (m_i - x_i) / V
    for (std::size_t c = 0; c < cvs.size(); ++c)
      for (std::size_t i = 0; i < d; ++i) {
        const LineFit f = acc[c * d + i].fit();
        worst = std::max(worst, zscore(f.b1, -1.0 / m.var, f.se1));
        worst = std::max(worst, zscore(f.b0, m.mean[i] / m.var, f.se0));
      }
  }
  Result r;
  r.value = worst;
  r.tolerance = 4.0;
  r.pass = worst <= r.tolerance;
  r.detail = "max |z| of slope/intercept, c in {gamma, 0.3, learned-zero}, d=1..3, 10^6 samples each";
  return r;
}

Result markov_projection(const Options& o) {
  Rng rng = Rng::derive(o.seed, 4);
  const auto s = faulted(NoiseSchedule::constant(1.0), o);
  const auto p = pair(1, s);
  const auto prior = p.prior();
  const auto target = p.target();
  double worst = 0.0;
  Vec x0(1), xT(1), xt(1), xi(1);
  for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    LineAccumulator acc;
    for (int k = 0; k < 200000; ++k) {
      draw(p, t, rng, x0, xT, xt);
      xi_bms(prior, target, s, CvSchedule::fixed_gamma(), x0, xT, xt, t, xi);
      acc.add(xt[0], xi[0]);
    }
    const LineFit f = acc.fit();
    const auto L = oracle::gaussian_optimal_drift_coefficients(p, t);
    worst = std::max({worst, zscore(f.b1, L.slope, f.se1), zscore(f.b0, L.offset[0], f.se0)});
  }
  Result r;
  r.value = worst;
  r.tolerance = 3.0;
  r.pass = worst <= r.tolerance;
  r.detail = "max |z| of regressed u* coefficients at t in {0.1,...,0.9}, 2e5 samples each";
  return r;
}

Result damped_minimizer(const Options& o) {
  Problem p;
  p.schedule = faulted(NoiseSchedule::constant(1.0), o);
  const auto gp = pair(1, p.schedule);
  p.prior = gp.prior();
  p.target = std::make_shared<GaussianTarget>(gp.target());
  Architecture lin;
  lin.state_dim = 1;
  lin.hidden_layers = 0;
  lin.n_freq = 2;
  lin.width = 8;
  const OutputScaling sc{p.schedule, p.t_cut};
  DriftField f(lin, 1, sc);
  DriftField ui(lin, 2, sc);
  Rng init = Rng::derive(o.seed, 5);
  for (double& v : ui.mutable_parameters()) v = init.uniform(-1, 1);
  const DriftField frozen = ui.snapshot();
  Rng rng = Rng::derive(o.seed, 6);
  const Pairs pairs{p.prior.sample(4000, rng), p.target->sample(4000, rng)};
  const MatchingBatch b = matching_batch(p, sc, pairs, rng);

  // ordinary least squares of y_hat on [x, embed(t), 1]
  const std::size_t P = f.parameters().size();
  std::vector<double> A(P * P, 0.0), rhs(P, 0.0), z(P);
  for (std::size_t r = 0; r < b.xt.rows; ++r) {
    if (!b.keep[r]) continue;
    z[0] = b.xt(r, 0);
    const Vec e = fourier_embed(b.t[r], lin.n_freq, lin.horizon);
    std::copy(e.begin(), e.end(), z.begin() + 1);
    z[P - 1] = 1.0;
    for (std::size_t i = 0; i < P; ++i) {
      rhs[i] += z[i] * b.target(r, 0);
      for (std::size_t j = 0; j < P; ++j) A[i * P + j] += z[i] * z[j];
    }
  }
  const auto phi = solve(A, rhs);

  // the loss is exactly quadratic in theta: one Newton step from zero
  auto minimizer = [&](double eta) {
    DriftField g = f;
    auto& th = g.mutable_parameters();
    std::fill(th.begin(), th.end(), 0.0);
    LossGrad g0;
    matching_loss(g, &frozen, b, eta, &g0);
    std::vector<double> H(P * P);
    for (std::size_t j = 0; j < P; ++j) {
      std::fill(th.begin(), th.end(), 0.0);
      th[j] = 1.0;
      LossGrad gj;
      matching_loss(g, &frozen, b, eta, &gj);
      for (std::size_t i = 0; i < P; ++i) H[i * P + j] = gj.grad[i] - g0.grad[i];
    }
    std::vector<double> neg(P);
    for (std::size_t i = 0; i < P; ++i) neg[i] = -g0.grad[i];
    return solve(H, neg);
  };
  double worst = 0.0;
  for (double eta : {0.0, 1.0, 10.0}) {
    const auto th = minimizer(eta);
    const double alpha = 1.0 / (1.0 + eta);
    for (std::size_t j = 0; j < P; ++j)
      worst = std::max(worst, std::abs(th[j] - (alpha * phi[j] + (1 - alpha) * frozen.parameters()[j])));
  }
  Result r;
  r.value = worst;
  r.tolerance = 1e-6;
  r.pass = worst <= r.tolerance;
  r.detail = "max coefficient error, eta in {0, 1, 10}, linear field, 4000 fixed samples";
  return r;
}

Result shb_sb(const Options& o) {
  Result r;
  // (a) memoryless corrector: xi_sb is xi_as bitwise
  std::size_t mismatches = 0;
  {
    Rng rng = Rng::derive(o.seed, 7);
    const auto s = faulted(NoiseSchedule::geometric(0.5, 1.5), o);
    const auto gmm = gmm_target(5, 2, 3.0, 8);
    for (const auto& prior : {PriorDistribution::dirac(Vec{0.0, 0.0}), PriorDistribution::gaussian(Vec{0.3, -0.2}, 1.2)}) {
      const auto PT = reference_terminal(prior, s);
      const auto corr = gaussian_score_fn(PT);
      for (int k = 0; k < 1000; ++k) {
        const Vec xT{rng.uniform(-4, 4), rng.uniform(-4, 4)};
        const double t = rng.uniform(0.0, 1.0);
        mismatches += xi_sb(corr, gmm, s, xT, t) != xi_as(PT, gmm, s, xT, t);
      }
    }
  }
  // (b) Markov drift regressed from xi_sb under the SB coupling, then simulated
  Rng rng = Rng::derive(o.seed, 8);
  const auto s = faulted(NoiseSchedule::constant(1.0), o);
  const auto p = oracle::with_sb_coupling(pair(1, s));
  const auto target = p.target();
  const auto corr = oracle::gaussian_sb_corrector(p);
  constexpr std::size_t steps = 100, per_time = 40000, paths = 20000;
  std::vector<LineFit> drift(steps);
  Vec x0(1), xT(1), xt(1), xi(1);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = s.horizon() * static_cast<double>(k) / steps;
    LineAccumulator acc;
    for (std::size_t j = 0; j < per_time; ++j) {
      draw(p, t, rng, x0, xT, xt);
      xi_sb(corr, target, s, xT, t, xi);
      acc.add(xt[0], xi[0]);
    }
    drift[k] = acc.fit();
  }
  const FunctionField u(1, [&](const Matrix& x, double t, Matrix& out) {
    const auto k = std::min<std::size_t>(steps - 1, static_cast<std::size_t>(std::lround(t / s.horizon() * steps)));
    out.resize(x.rows, 1);
    for (std::size_t i = 0; i < x.rows; ++i) out(i, 0) = drift[k].b0 + drift[k].b1 * x(i, 0);
  });
  const auto sim = simulate_forward(u, p.prior(), s, steps, paths, rng, false, 0.0);
  double m = 0, v = 0;
  for (double x : sim.xT.data) m += x;
  m /= paths;
  for (double x : sim.xT.data) v += (x - m) * (x - m);
  v /= paths - 1.0;
  const double b2 = p.sT * p.sT;
  const double zm = zscore(m, p.muT[0], std::sqrt(v / paths));
  const double zv = zscore(v, b2, v * std::sqrt(2.0 / (paths - 1.0)));
  r.value = std::max(zm, zv);
  r.tolerance = 4.0;
  r.pass = mismatches == 0 && r.value <= r.tolerance;
  r.detail = "xi_sb vs xi_as mismatches " + std::to_string(mismatches) + " of 2000; terminal mean/var |z| " + fmt(zm) +
             "/" + fmt(zv);
  return r;
}

Result importance_log_z(const Options& o) {
  const auto s = faulted(NoiseSchedule::constant(1.0), o);
  const auto p = pair(2, s);
  const double log_z = 2.0;
  const auto target = p.target(log_z);
  const auto u = oracle::optimal_drift_field(p), v = oracle::backward_drift_field(p);
  Rng rng = Rng::derive(o.seed, 9);
  const auto sim = simulate_forward(u, p.prior(), s, 500, 2000, rng, true, 0.0);
  const auto e = snis_estimate(path_log_weights(u, v, *sim.path, p.prior(), target, s));
  Result r;
  r.value = zscore(e.log_z, log_z, e.log_z_se);
  r.tolerance = 3.0;
  r.pass = r.value <= r.tolerance;
  r.detail = "log Z " + fmt(e.log_z) + " +- " + fmt(e.log_z_se) + " (true 2), ESS " + fmt(e.ess) + "/2000";
  return r;
}

Result pf_ode(const Options& o) {
  const auto s = faulted(NoiseSchedule::constant(1.0), o);
  const auto p = pair(2, s);
  const auto u = oracle::optimal_drift_field(p), sc = oracle::scaled_score_field(p);
  Rng rng = Rng::derive(o.seed, 10);
  const Matrix x0 = p.prior().sample(1000, rng);
  const auto res = pf_ode_log_likelihood(u, sc, x0, p.prior(), s, 500);
  double acc = 0.0;
  for (std::size_t i = 0; i < x0.rows; ++i) {
    const double e = res.log_density[i] - oracle::gaussian_marginal_log_density(p, res.samples.row(i), s.horizon());
    acc += e * e;
  }
  Result r;
  r.value = std::sqrt(acc / static_cast<double>(x0.rows));
  r.tolerance = 0.02;
  r.pass = r.value <= r.tolerance;
  r.detail = "RMS nats over 1000 points, d=2, 500 RK4 steps";
  return r;
}

Result cv_optimum(const Options& o) {
  Rng rng = Rng::derive(o.seed, 11);
  const auto s = faulted(NoiseSchedule::constant(1.0), o);
  const auto p = pair(1, s);
  const auto prior = p.prior();
  const auto target = p.target();
  const auto j0 = independent_score_0(prior), jT = independent_score_T(target);
  const std::size_t n = 50000;
  double worst = 0.0, nonlin = 0.0;
  const auto c0 = CvSchedule::fixed_function([](double) { return 0.0; });
  const auto c1 = CvSchedule::fixed_function([](double) { return 1.0; });
  const auto ch = CvSchedule::fixed_function([](double) { return 0.5; });
  std::ostringstream det;
  for (double t : {0.25, 0.5, 0.75}) {
    Matrix X0(n, 1), XT(n, 1), Xt(n, 1);
    for (std::size_t r = 0; r < n; ++r) draw(p, t, rng, X0.row(r), XT.row(r), Xt.row(r));
    const double cstar = optimal_scalar_cv(X0, XT, Xt, t, j0, jT, s);
    // xi^c = A + c B; grid-search the pooled sample variance
    std::vector<double> A(n), B(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double a = xi_general(j0, jT, s, c0, X0.row(r), XT.row(r), Xt.row(r), t)[0];
      const double b = xi_general(j0, jT, s, c1, X0.row(r), XT.row(r), Xt.row(r), t)[0];
      const double h = xi_general(j0, jT, s, ch, X0.row(r), XT.row(r), Xt.row(r), t)[0];
      A[r] = a;
      B[r] = b - a;
      nonlin = std::max(nonlin, std::abs(h - (a + 0.5 * B[r])) / (1.0 + std::abs(h)));
    }
    double best_c = 0.0, best_v = 1e300;
    for (int i = 0; i <= 3000; ++i) {
      const double c = -1.0 + i / 1000.0;
      double m = 0.0, q = 0.0;
      for (std::size_t r = 0; r < n; ++r) m += A[r] + c * B[r];
      m /= n;
      for (std::size_t r = 0; r < n; ++r) {
        const double e = A[r] + c * B[r] - m;
        q += e * e;
      }
      if (q < best_v) {
        best_v = q;
        best_c = c;
      }
    }
    worst = std::max(worst, std::abs(cstar - best_c));
    det << "t=" << t << " c*=" << fmt(cstar) << " grid=" << best_c << "; ";
  }
  Result r;
  r.value = worst;
  r.tolerance = 0.02;
  r.pass = worst <= r.tolerance && nonlin < 1e-9;
  r.detail = det.str();
  return r;
}

Result w2_bruteforce(const Options& o) {
  Rng rng = Rng::derive(o.seed, 12);
  std::size_t disagree = 0;
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    Matrix a(8, 2), b(8, 2);
    for (double& x : a.data) x = rng.normal();
    for (double& x : b.data) x = 0.5 + 1.5 * rng.normal();
    std::vector<double> cost(64);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        double c = 0.0;
        for (std::size_t k = 0; k < 2; ++k) c += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
        cost[i * 8 + j] = c;
      }
    std::vector<std::size_t> perm(8), best_perm;
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double c = 0.0;
      for (std::size_t i = 0; i < 8; ++i) c += cost[i * 8 + perm[i]];
      if (c < best) {
        best = c;
        best_perm = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    disagree += solve_assignment(cost, 8) != best_perm;
    worst = std::max(worst, std::abs(wasserstein2(a, b) - std::sqrt(best / 8.0)));
  }
  Result r;
  r.value = static_cast<double>(disagree);
  r.tolerance = 0.0;
  r.pass = disagree == 0 && worst <= 1e-12;
  r.detail = "assignments differing from the 8! optimum over 50 instances; max |W2 - brute| " + fmt(worst);
  return r;
}

}  // namespace

const std::vector<Check>& registry() {
  static const std::vector<Check> checks{
      {"AC01", "score decompositions", "max abs error", score_decomposition},
      {"AC02", "Nelson relation", "max abs error", nelson},
      {"AC03", "target score identity", "max |z|", target_score_identity},
      {"AC04", "Markovian projection fixed point", "max |z|", markov_projection},
      {"AC05", "damped minimizer", "max coefficient error", damped_minimizer},
      {"AC06", "half-bridge / Schrodinger consistency", "max |z|", shb_sb},
      {"AC07", "importance-sampling log Z", "|z|", importance_log_z},
      {"AC08", "probability-flow likelihood", "RMS nats", pf_ode},
      {"AC11", "control-variate optimum", "|c* - grid|", cv_optimum},
      {"AC12", "exact W2 vs brute force", "disagreements", w2_bruteforce},
  };
  return checks;
}

Result run(const Check& c, const Options& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  Result r;
  try {
    r = c.run(opt);
  } catch (const std::exception& e) {
    r.pass = false;
    r.value = std::numeric_limits<double>::quiet_NaN();
    r.detail = std::string("error: ") + e.what();
  }
  r.id = c.id;
  r.name = c.name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace bms::checks
