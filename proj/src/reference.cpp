#include "bms/reference.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "bms/errors.hpp"

namespace bms::reference {

namespace {

void check_dims(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    std::ostringstream os;
    os << op << ": dimension mismatch (" << a << " vs " << b << ")";
    throw ShapeError(os.str());
  }
}

void guard_low(const NoiseSchedule& s, double t, const char* op) {
  if (t < 0.0 || t > s.horizon()) throw DomainError(std::string(op) + ": t outside [0, T]");
  if (t <= singular_guard) throw SingularTimeError(std::string(op) + ": singular at t = 0", t);
}

void guard_high(const NoiseSchedule& s, double t, const char* op) {
  if (t < 0.0 || t > s.horizon()) throw DomainError(std::string(op) + ": t outside [0, T]");
  if (t >= s.horizon() - singular_guard) throw SingularTimeError(std::string(op) + ": singular at t = T", t);
}

}  // namespace

double log_normal_isotropic(CSpan x, CSpan mean, double var) {
  check_dims(x.size(), mean.size(), "log_normal_isotropic");
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    q += d * d;
  }
  return -0.5 * q / var - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi * var);
}

void sample_bridge(const NoiseSchedule& s, CSpan x0, CSpan xT, double t, Rng& rng, MSpan out) {
  check_dims(x0.size(), xT.size(), "sample_bridge");
  check_dims(x0.size(), out.size(), "sample_bridge");
  const double g = s.gamma(t), h = s.one_minus_gamma(t);
  const double sd = std::sqrt(s.kappa_total() * g * h);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double eps = rng.normal();
    out[i] = h * x0[i] + g * xT[i] + sd * eps;
  }
}

Vec sample_bridge(const NoiseSchedule& s, CSpan x0, CSpan xT, double t, Rng& rng) {
  Vec out(x0.size());
  sample_bridge(s, x0, xT, t, rng, out);
  return out;
}

void score_t_given_0(const NoiseSchedule& s, CSpan x0, CSpan xt, double t, MSpan out) {
  check_dims(x0.size(), xt.size(), "score_t_given_0");
  check_dims(x0.size(), out.size(), "score_t_given_0");
  guard_low(s, t, "score_t_given_0");
  const double k = s.kappa(t);
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = (x0[i] - xt[i]) / k;
}

Vec score_t_given_0(const NoiseSchedule& s, CSpan x0, CSpan xt, double t) {
  Vec out(x0.size());
  score_t_given_0(s, x0, xt, t, out);
  return out;
}

void score_T_given_t(const NoiseSchedule& s, CSpan xt, CSpan xT, double t, MSpan out) {
  check_dims(xt.size(), xT.size(), "score_T_given_t");
  check_dims(xt.size(), out.size(), "score_T_given_t");
  guard_high(s, t, "score_T_given_t");
  const double r = s.kappa_remaining(t);
  for (std::size_t i = 0; i < xt.size(); ++i) out[i] = (xT[i] - xt[i]) / r;
}

Vec score_T_given_t(const NoiseSchedule& s, CSpan xt, CSpan xT, double t) {
  Vec out(xt.size());
  score_T_given_t(s, xt, xT, t, out);
  return out;
}

void score_bridge(const NoiseSchedule& s, CSpan x0, CSpan xT, CSpan xt, double t, MSpan out) {
  check_dims(x0.size(), xT.size(), "score_bridge");
  check_dims(x0.size(), xt.size(), "score_bridge");
  check_dims(x0.size(), out.size(), "score_bridge");
  guard_low(s, t, "score_bridge");
  guard_high(s, t, "score_bridge");
  const double g = s.gamma(t), h = s.one_minus_gamma(t);
  const double v = s.kappa_total() * g * h;
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = (-xt[i] + h * x0[i] + g * xT[i]) / v;
}

Vec score_bridge(const NoiseSchedule& s, CSpan x0, CSpan xT, CSpan xt, double t) {
  Vec out(x0.size());
  score_bridge(s, x0, xT, xt, t, out);
  return out;
}

void brownian_bridge_drift(const NoiseSchedule& s, CSpan x, CSpan xT, double t, MSpan out) {
  score_T_given_t(s, x, xT, t, out);
  const double sg = s.sigma(t);
  for (double& v : out) v *= sg;
}

Vec brownian_bridge_drift(const NoiseSchedule& s, CSpan x, CSpan xT, double t) {
  Vec out(x.size());
  brownian_bridge_drift(s, x, xT, t, out);
  return out;
}

double log_density_t_given_0(const NoiseSchedule& s, CSpan x0, CSpan xt, double t) {
  guard_low(s, t, "log_density_t_given_0");
  return log_normal_isotropic(xt, x0, s.kappa(t));
}

double log_density_T_given_t(const NoiseSchedule& s, CSpan xt, CSpan xT, double t) {
  guard_high(s, t, "log_density_T_given_t");
  return log_normal_isotropic(xT, xt, s.kappa_remaining(t));
}

double log_density_bridge(const NoiseSchedule& s, CSpan x0, CSpan xT, CSpan xt, double t) {
  guard_low(s, t, "log_density_bridge");
  guard_high(s, t, "log_density_bridge");
  const double g = s.gamma(t), h = s.one_minus_gamma(t);
  Vec mean(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) mean[i] = h * x0[i] + g * xT[i];
  return log_normal_isotropic(xt, mean, s.kappa_total() * g * h);
}

}  // namespace bms::reference
