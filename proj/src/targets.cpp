#include "bms/targets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "bms/errors.hpp"
#include "bms/kernels/kernels.hpp"

namespace bms {

namespace {

void expect_dim(std::size_t got, std::size_t want, const std::string& who) {
  if (got != want)
    throw ShapeError(who + ": expected dimension " + std::to_string(want) + ", got " + std::to_string(got));
}

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

Vec TargetDensity::score(CSpan x) const {
  Vec out(dim());
  score(x, out);
  return out;
}

Matrix TargetDensity::sample(std::size_t, Rng&) const {
  throw UnsupportedCouplingError("target '" + name() + "' has no exact sampler");
}

// ---------------------------------------------------------------- Gaussian

GaussianTarget::GaussianTarget(Vec mean, double scale, double log_z)
    : mean_(std::move(mean)), scale_(scale), log_z_(log_z) {
  if (!(scale > 0.0)) throw DomainError("gaussian target: scale must be positive");
  if (mean_.empty()) throw ShapeError("gaussian target: empty mean");
}

double GaussianTarget::log_rho(CSpan x) const {
  expect_dim(x.size(), dim(), "gaussian target");
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) q += (x[i] - mean_[i]) * (x[i] - mean_[i]);
  const double v = scale_ * scale_;
  return log_z_ - 0.5 * q / v - 0.5 * static_cast<double>(dim()) * (kLog2Pi + std::log(v));
}

void GaussianTarget::score(CSpan x, MSpan out) const {
  expect_dim(x.size(), dim(), "gaussian target");
  const double v = scale_ * scale_;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (mean_[i] - x[i]) / v;
}

Matrix GaussianTarget::sample(std::size_t n, Rng& rng) const {
  Matrix m(n, dim());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < dim(); ++i) m(r, i) = mean_[i] + scale_ * rng.normal();
  return m;
}

// ---------------------------------------------------------------- GMM

GmmTarget::GmmTarget(Matrix means, double variance) : means_(std::move(means)), variance_(variance) {
  if (means_.rows == 0 || means_.cols == 0) throw ShapeError("gmm target: need at least one component and dimension");
  if (!(variance > 0.0)) throw DomainError("gmm target: variance must be positive");
}

double GmmTarget::log_rho(CSpan x) const {
  expect_dim(x.size(), dim(), "gmm target");
  const std::size_t K = components();
  thread_local Vec d2;
  d2.resize(K);
  kernels::active().squared_distances(K, dim(), means_.data.data(), x.data(), d2.data());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    d2[k] = -0.5 * d2[k] / variance_;
    mx = std::max(mx, d2[k]);
  }
  double s = 0.0;
  for (std::size_t k = 0; k < K; ++k) s += std::exp(d2[k] - mx);
  return mx + std::log(s) - std::log(static_cast<double>(K)) -
         0.5 * static_cast<double>(dim()) * (kLog2Pi + std::log(variance_));
}

void GmmTarget::score(CSpan x, MSpan out) const {
  expect_dim(x.size(), dim(), "gmm target");
  const std::size_t K = components(), d = dim();
  thread_local Vec w;
  w.resize(K);
  kernels::active().squared_distances(K, d, means_.data.data(), x.data(), w.data());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    w[k] = -0.5 * w[k] / variance_;
    mx = std::max(mx, w[k]);
  }
  double s = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    w[k] = std::exp(w[k] - mx);
    s += w[k];
  }
  // score = sum_k r_k (mu_k - x) / var with responsibilities r_k
  for (std::size_t i = 0; i < d; ++i) out[i] = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double r = w[k] / s;
    for (std::size_t i = 0; i < d; ++i) out[i] += r * means_(k, i);
  }
  for (std::size_t i = 0; i < d; ++i) out[i] = (out[i] - x[i]) / variance_;
}

Matrix GmmTarget::sample(std::size_t n, Rng& rng) const {
  Matrix m(n, dim());
  const double sd = std::sqrt(variance_);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t k = rng.below(components());
    for (std::size_t i = 0; i < dim(); ++i) m(r, i) = means_(k, i) + sd * rng.normal();
  }
  return m;
}

std::size_t GmmTarget::mode_assignment(CSpan x) const {
  expect_dim(x.size(), dim(), "gmm target");
  // Equal weights and a shared variance: the densest component is the nearest mean.
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < components(); ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) s += (x[i] - means_(k, i)) * (x[i] - means_(k, i));
    if (s < best_d) {
      best_d = s;
      best = k;
    }
  }
  return best;
}

GmmTarget gmm_target(std::size_t K, std::size_t d, double box_halfwidth, std::uint64_t seed, double variance) {
  if (K == 0 || d == 0) throw DomainError("gmm_target: K and d must be positive");
  Rng rng(seed);
  Matrix means(K, d);
  for (double& v : means.data) v = rng.uniform(-box_halfwidth, box_halfwidth);
  return GmmTarget(std::move(means), variance);
}

// ---------------------------------------------------------------- DW-4

double dw4_energy(CSpan x, const Dw4Params& p) {
  expect_dim(x.size(), 8, "dw4");
  double e = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      const double dx = x[2 * i] - x[2 * j], dy = x[2 * i + 1] - x[2 * j + 1];
      const double r = std::sqrt(dx * dx + dy * dy) - p.d0;
      const double r2 = r * r;
      e += p.a * r + p.b * r2 + p.c * r2 * r2;
    }
  return e / p.tau;
}

double Dw4Target::energy(CSpan x) const { return dw4_energy(x, p_); }

void Dw4Target::score(CSpan x, MSpan out) const {
  expect_dim(x.size(), 8, "dw4");
  std::fill(out.begin(), out.end(), 0.0);
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      const double dx = x[2 * i] - x[2 * j], dy = x[2 * i + 1] - x[2 * j + 1];
      const double dist = std::sqrt(dx * dx + dy * dy);
      if (dist < 1e-12) continue;  // direction undefined; the energy is flat to first order in |dx|
      const double r = dist - p_.d0;
      const double dE = (p_.a + 2.0 * p_.b * r + 4.0 * p_.c * r * r * r) / p_.tau;
      const double gx = dE * dx / dist, gy = dE * dy / dist;
      out[2 * i] -= gx;
      out[2 * i + 1] -= gy;
      out[2 * j] += gx;
      out[2 * j + 1] += gy;
    }
}

// ---------------------------------------------------------------- Lennard-Jones

LjTarget::LjTarget(LjParams p) : p_(p) {
  if (p_.particles < 2) throw DomainError("lj target: need at least two particles");
}

LjEnergy lj_energy(CSpan x, const LjParams& p) {
  expect_dim(x.size(), 3 * p.particles, "lj");
  const std::size_t n = p.particles;
  bool singular = false;
  double lj = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (int k = 0; k < 3; ++k) d2 += (x[3 * i + k] - x[3 * j + k]) * (x[3 * i + k] - x[3 * j + k]);
      if (d2 <= 0.0) {
        singular = true;
        continue;
      }
      const double s6 = std::pow(p.r_m * p.r_m / d2, 3);
      lj += s6 * s6 - 2.0 * s6;
    }
  lj *= p.epsilon / p.tau;
  double com[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) com[k] += x[3 * i + k];
  for (double& c : com) c /= static_cast<double>(n);
  double osc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) osc += (x[3 * i + k] - com[k]) * (x[3 * i + k] - com[k]);
  double e = lj + p.c_osc * osc;
  if (singular || !(e < p.energy_clamp)) return {p.energy_clamp, true};
  return {e, false};
}

LjEnergy LjTarget::energy_checked(CSpan x) const { return lj_energy(x, p_); }

void LjTarget::raw_score(CSpan x, MSpan out) const {
  expect_dim(x.size(), dim(), "lj");
  const std::size_t n = p_.particles;
  std::fill(out.begin(), out.end(), 0.0);
  const double scale = p_.epsilon / p_.tau;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double diff[3], d2 = 0.0;
      for (int k = 0; k < 3; ++k) {
        diff[k] = x[3 * i + k] - x[3 * j + k];
        d2 += diff[k] * diff[k];
      }
      if (d2 <= 0.0) continue;
      const double s6 = std::pow(p_.r_m * p_.r_m / d2, 3);
      // dE/d(d2) for s6^2 - 2 s6 with s6 = (rm^2/d2)^3: (-6 s12 + 6 s6) / d2
      const double dEdd2 = scale * (-6.0 * s6 * s6 + 6.0 * s6) / d2;
      for (int k = 0; k < 3; ++k) {
        const double g = 2.0 * dEdd2 * diff[k];
        out[3 * i + k] -= g;
        out[3 * j + k] += g;
      }
    }
  double com[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) com[k] += x[3 * i + k];
  for (double& c : com) c /= static_cast<double>(n);
  // sum_i (x_i - com) = 0, so the com dependence drops out of the gradient.
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) out[3 * i + k] -= 2.0 * p_.c_osc * (x[3 * i + k] - com[k]);
}

void LjTarget::score(CSpan x, MSpan out) const {
  raw_score(x, out);
  double nrm = 0.0;
  for (double v : out) nrm += v * v;
  nrm = std::sqrt(nrm);
  if (!std::isfinite(nrm)) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  if (nrm > p_.score_clip) {
    const double f = p_.score_clip / nrm;
    for (double& v : out) v *= f;
  }
}

// ---------------------------------------------------------------- prior

PriorDistribution PriorDistribution::gaussian(Vec mean, double scale) {
  if (!(scale > 0.0)) throw DomainError("gaussian prior: scale must be positive");
  if (mean.empty()) throw ShapeError("gaussian prior: empty mean");
  PriorDistribution p;
  p.mean_ = std::move(mean);
  p.scale_ = scale;
  return p;
}

PriorDistribution PriorDistribution::dirac(Vec point) {
  if (point.empty()) throw ShapeError("dirac prior: empty point");
  PriorDistribution p;
  p.mean_ = std::move(point);
  p.dirac_ = true;
  return p;
}

void PriorDistribution::sample(Rng& rng, MSpan out) const {
  expect_dim(out.size(), dim(), "prior");
  for (std::size_t i = 0; i < dim(); ++i) out[i] = dirac_ ? mean_[i] : mean_[i] + scale_ * rng.normal();
}

Matrix PriorDistribution::sample(std::size_t n, Rng& rng) const {
  Matrix m(n, dim());
  for (std::size_t r = 0; r < n; ++r) sample(rng, m.row(r));
  return m;
}

double PriorDistribution::log_density(CSpan x) const {
  if (dirac_) throw UnsupportedCouplingError("dirac prior has no density");
  expect_dim(x.size(), dim(), "prior");
  double q = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) q += (x[i] - mean_[i]) * (x[i] - mean_[i]);
  const double v = scale_ * scale_;
  return -0.5 * q / v - 0.5 * static_cast<double>(dim()) * (kLog2Pi + std::log(v));
}

void PriorDistribution::score(CSpan x, MSpan out) const {
  if (dirac_) throw UnsupportedCouplingError("dirac prior has no score; use the reverse-conditional coupling");
  expect_dim(x.size(), dim(), "prior");
  const double v = scale_ * scale_;
  for (std::size_t i = 0; i < dim(); ++i) out[i] = (mean_[i] - x[i]) / v;
}

Vec PriorDistribution::score(CSpan x) const {
  Vec out(dim());
  score(x, out);
  return out;
}

}  // namespace bms
