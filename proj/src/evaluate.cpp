#include "bms/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bms/errors.hpp"
#include "bms/kernels/kernels.hpp"

namespace bms {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

Json MetricsReport::to_json() const {
  return {{"mode_tvd", opt_json(mode_tvd)},
          {"sliced_tvd", opt_json(sliced_tvd)},
          {"w2", opt_json(w2)},
          {"energy_w2", opt_json(energy_w2)},
          {"n_samples", n_samples},
          {"seed", seed}};
}

double mode_tvd(const GmmTarget& g, const Matrix& samples) {
  if (samples.rows == 0) throw DomainError("mode_tvd: no samples");
  if (samples.cols != g.dim()) throw ShapeError("mode_tvd: sample dimension does not match the mixture");
  const std::size_t K = g.components();
  std::vector<double> counts(K, 0.0);
  for (std::size_t r = 0; r < samples.rows; ++r) counts[g.mode_assignment(samples.row(r))] += 1.0;
  double s = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    s += std::abs(1.0 / static_cast<double>(K) - counts[k] / static_cast<double>(samples.rows));
  return 0.5 * s;
}

double sliced_tvd(const Matrix& a, const Matrix& b, std::size_t projections, std::size_t bins, std::uint64_t seed) {
  if (a.rows == 0 || b.rows == 0) throw DomainError("sliced_tvd: empty sample set");
  if (a.cols != b.cols) throw ShapeError("sliced_tvd: dimension mismatch");
  if (projections == 0 || bins == 0) throw DomainError("sliced_tvd: need at least one projection and one bin");
  const std::size_t d = a.cols;
  Rng rng(seed);
  Vec dir(d);
  std::vector<double> pa(a.rows), pb(b.rows), ha(bins), hb(bins);
  double total = 0.0;
  for (std::size_t p = 0; p < projections; ++p) {
    double nrm = 0.0;
    do {
      rng.fill_normal(dir);
      nrm = 0.0;
      for (double v : dir) nrm += v * v;
    } while (nrm == 0.0);
    nrm = std::sqrt(nrm);
    for (double& v : dir) v /= nrm;
    double lo = kInf, hi = -kInf;
    auto project = [&](const Matrix& m, std::vector<double>& out) {
      for (std::size_t r = 0; r < m.rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += m(r, j) * dir[j];
        out[r] = s;
        lo = std::min(lo, s);
        hi = std::max(hi, s);
      }
    };
    project(a, pa);
    project(b, pb);
    if (!(hi > lo)) continue;  // everything in one bin
    const double w = (hi - lo) / static_cast<double>(bins);
    auto fill = [&](const std::vector<double>& v, std::vector<double>& h) {
      std::fill(h.begin(), h.end(), 0.0);
      for (double x : v) {
        auto k = static_cast<std::size_t>((x - lo) / w);
        h[std::min(k, bins - 1)] += 1.0 / static_cast<double>(v.size());
      }
    };
    fill(pa, ha);
    fill(pb, hb);
    double tv = 0.0;
    for (std::size_t k = 0; k < bins; ++k) tv += std::abs(ha[k] - hb[k]);
    total += std::min(1.0, 0.5 * tv);
  }
  return total / static_cast<double>(projections);
}

std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) throw ShapeError("solve_assignment: cost matrix is not n x n");
  // 1-based potentials; column 0 is a virtual start node.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      const double* row = cost.data() + (i0 - 1) * n;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col(n);
  for (std::size_t j = 1; j <= n; ++j) col[p[j] - 1] = j - 1;
  return col;
}

double wasserstein2(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw ShapeError("wasserstein2: sample sets must have equal shapes");
  const std::size_t n = a.rows;
  if (n > kMaxW2Samples)
    throw DomainError("wasserstein2: exact solver limited to " + std::to_string(kMaxW2Samples) + " samples");
  if (n == 0) return 0.0;
  std::vector<double> cost(n * n);
  const auto& kt = kernels::active();
  for (std::size_t i = 0; i < n; ++i) kt.squared_distances(n, a.cols, b.data.data(), a.data.data() + i * a.cols, cost.data() + i * n);
  const auto col = solve_assignment(cost, n);
  // recompute the matched costs exactly
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double c = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) {
      const double e = a(i, j) - b(col[i], j);
      c += e * e;
    }
    s += c;
  }
  return std::sqrt(s / static_cast<double>(n));
}

double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("wasserstein2_1d: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  // integrate (F^-1 - G^-1)^2 over the merged quantile grid
  std::size_t i = 0, j = 0;
  double q = 0.0, s = 0.0;
  while (i < a.size() && j < b.size()) {
    const double qa = static_cast<double>(i + 1) / na, qb = static_cast<double>(j + 1) / nb;
    const double qn = std::min(qa, qb);
    const double e = a[i] - b[j];
    s += (qn - q) * e * e;
    q = qn;
    if (qa <= qn) ++i;
    if (qb <= qn) ++j;
  }
  return std::sqrt(s);
}

double energy_w2(const TargetDensity& target, const Matrix& a, const Matrix& b) {
  std::vector<double> ea(a.rows), eb(b.rows);
  for (std::size_t r = 0; r < a.rows; ++r) ea[r] = target.energy(a.row(r));
  for (std::size_t r = 0; r < b.rows; ++r) eb[r] = target.energy(b.row(r));
  return wasserstein2_1d(std::move(ea), std::move(eb));
}

std::vector<double> interatomic_distances(const Matrix& x, std::size_t particles) {
  if (particles == 0 || x.cols % particles != 0) throw ShapeError("interatomic_distances: bad particle count");
  const std::size_t sd = x.cols / particles;
  std::vector<double> out;
  out.reserve(x.rows * particles * (particles - 1) / 2);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t i = 0; i < particles; ++i)
      for (std::size_t j = i + 1; j < particles; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < sd; ++k) {
          const double e = x(r, i * sd + k) - x(r, j * sd + k);
          s += e * e;
        }
        out.push_back(std::sqrt(s));
      }
  return out;
}

Histogram histogram(const std::vector<double>& v, std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw DomainError("histogram: need bins > 0 and hi > lo");
  Histogram h{lo, hi, std::vector<double>(bins, 0.0)};
  const double w = (hi - lo) / static_cast<double>(bins);
  std::size_t n = 0;
  for (double x : v) {
    if (!(x >= lo && x <= hi)) continue;
    const auto k = std::min(static_cast<std::size_t>((x - lo) / w), bins - 1);
    h.density[k] += 1.0;
    ++n;
  }
  if (n > 0)
    for (double& c : h.density) c /= static_cast<double>(n) * w;
  return h;
}

// ------------------------------------------------------------------ weights

Vec path_log_weights(const ControlField& u, const ControlField& v, const Trajectory& traj,
                     const PriorDistribution& prior, const TargetDensity& target, const NoiseSchedule& s) {
  if (prior.is_dirac()) throw UnsupportedCouplingError("path_log_weights: a Dirac prior has no density");
  if (traj.states.size() < 2 || traj.times.size() != traj.states.size())
    throw ShapeError("path_log_weights: trajectory needs at least one step");
  const std::size_t N = traj.states.size() - 1, n = traj.states[0].rows, d = traj.states[0].cols;
  Vec lw(n);
  for (std::size_t r = 0; r < n; ++r)
    lw[r] = target.log_rho(traj.states[N].row(r)) - prior.log_density(traj.states[0].row(r));
  Matrix uk, vk;
  for (std::size_t k = 0; k < N; ++k) {
    const double t0 = traj.times[k], t1 = traj.times[k + 1], dt = t1 - t0, sg = s.sigma(t0);
    const Matrix& a = traj.states[k];
    const Matrix& b = traj.states[k + 1];
    u.eval(a, t0, uk);
    v.eval(b, t1, vk);
    const double inv = 1.0 / (2.0 * sg * sg * dt);
    for (std::size_t r = 0; r < n; ++r) {
      double fwd = 0.0, bwd = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double D = b(r, j) - a(r, j);
        const double ef = D - sg * uk(r, j) * dt, eb = D + sg * vk(r, j) * dt;
        fwd += ef * ef;
        bwd += eb * eb;
      }
      lw[r] += (fwd - bwd) * inv;
    }
  }
  return lw;
}

ImportanceEstimate snis_estimate(const Vec& log_weights, const Vec& observable) {
  if (log_weights.empty()) throw DomainError("snis_estimate: no weights");
  if (!observable.empty() && observable.size() != log_weights.size())
    throw ShapeError("snis_estimate: observable length does not match the weights");
  ImportanceEstimate e;
  e.log_weights = log_weights;
  double m = -kInf;
  for (double l : log_weights) {
    if (std::isnan(l)) throw DegenerateError("snis_estimate: NaN log-weight");
    m = std::max(m, l);
  }
  if (m == -kInf) throw DegenerateError("snis_estimate: all weights are zero");
  if (m == kInf) throw DegenerateError("snis_estimate: infinite log-weight");
  const double n = static_cast<double>(log_weights.size());
  double sw = 0.0, sw2 = 0.0, so = 0.0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    const double w = std::exp(log_weights[i] - m);
    sw += w;
    sw2 += w * w;
    if (!observable.empty()) so += w * observable[i];
  }
  e.ess = sw * sw / sw2;
  const double mean = sw / n;
  e.log_z = m + std::log(mean);
  const double var = std::max(0.0, sw2 / n - mean * mean) * n / std::max(1.0, n - 1.0);
  e.log_z_se = std::sqrt(var / n) / mean;
  e.observable = observable.empty() ? std::numeric_limits<double>::quiet_NaN() : so / sw;
  return e;
}

// ---------------------------------------------------------------- PF-ODE

PfOdeResult pf_ode_log_likelihood(const ControlField& u, const ControlField& s, const Matrix& x0,
                                  const PriorDistribution& prior, const NoiseSchedule& sched, std::size_t n_steps,
                                  double t_start, DivergenceMode mode) {
  if (n_steps == 0) throw DomainError("pf_ode_log_likelihood: n_steps must be >= 1");
  if (prior.is_dirac()) throw UnsupportedCouplingError("pf_ode_log_likelihood: a Dirac prior has no density");
  const std::size_t n = x0.rows, d = x0.cols;
  if (mode == DivergenceMode::Exact && d > 16)
    throw DomainError("pf_ode_log_likelihood: exact divergence is limited to d <= 16");
  PfOdeResult res;
  res.samples = x0;
  res.log_density.resize(n);
  for (std::size_t r = 0; r < n; ++r) res.log_density[r] = prior.log_density(x0.row(r));

  Matrix fu, fs;
  Vec du, ds;
  // f and div f at (x, t)
  auto rhs = [&](const Matrix& x, double t, Matrix& f, Vec& div) {
    const double sg = sched.sigma(t);
    u.eval(x, t, fu);
    s.eval(x, t, fs);
    if (mode == DivergenceMode::Exact) {
      u.divergence(x, t, du);
      s.divergence(x, t, ds);
    } else {
      fd_divergence(u, x, t, 1e-4, du);
      fd_divergence(s, x, t, 1e-4, ds);
    }
    f.resize(n, d);
    for (std::size_t i = 0; i < n * d; ++i) f.data[i] = sg * (fu.data[i] - 0.5 * fs.data[i]);
    div.resize(n);
    for (std::size_t r = 0; r < n; ++r) div[r] = sg * (du[r] - 0.5 * ds[r]);
  };

  const double T = sched.horizon(), h = (T - t_start) / static_cast<double>(n_steps);
  Matrix k1, k2, k3, k4, tmp(n, d);
  Vec l1, l2, l3, l4;
  Matrix& x = res.samples;
  for (std::size_t k = 0; k < n_steps; ++k) {
    const double t = t_start + static_cast<double>(k) * h;
    const double tn = k + 1 == n_steps ? T : t + h;
    rhs(x, t, k1, l1);
    for (std::size_t i = 0; i < n * d; ++i) tmp.data[i] = x.data[i] + 0.5 * h * k1.data[i];
    rhs(tmp, t + 0.5 * h, k2, l2);
    for (std::size_t i = 0; i < n * d; ++i) tmp.data[i] = x.data[i] + 0.5 * h * k2.data[i];
    rhs(tmp, t + 0.5 * h, k3, l3);
    for (std::size_t i = 0; i < n * d; ++i) tmp.data[i] = x.data[i] + h * k3.data[i];
    rhs(tmp, tn, k4, l4);
    for (std::size_t i = 0; i < n * d; ++i)
      x.data[i] += h / 6.0 * (k1.data[i] + 2.0 * k2.data[i] + 2.0 * k3.data[i] + k4.data[i]);
    for (std::size_t r = 0; r < n; ++r) {
      res.log_density[r] -= h / 6.0 * (l1[r] + 2.0 * l2[r] + 2.0 * l3[r] + l4[r]);
      if (!std::isfinite(res.log_density[r]))
        throw SimulationDivergenceError("pf_ode_log_likelihood: non-finite divergence at step " + std::to_string(k + 1),
                                        k + 1);
    }
  }
  return res;
}

}  // namespace bms
