#include "bms/schedules.hpp"

#include <cmath>
#include <sstream>

#include "bms/errors.hpp"

namespace bms {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

}  // namespace

NoiseSchedule::NoiseSchedule(ScheduleKind kind, double horizon) : kind_(kind), horizon_(horizon) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw DomainError("schedule horizon T must be positive");
  std::visit(overloaded{
                 [](const ConstantSchedule& c) {
                   if (!(c.sigma > 0.0)) throw DomainError("constant schedule: sigma must be positive");
                 },
                 [](const GeometricSchedule& g) {
                   if (!(g.sigma_min > 0.0) || !(g.sigma_max > g.sigma_min))
                     throw DomainError("geometric schedule: need 0 < sigma_min < sigma_max");
                 },
                 [](const EdmVeSchedule& e) {
                   if (!(e.sigma_min > 0.0) || !(e.sigma_max > 0.0) || !(e.rho > 0.0))
                     throw DomainError("edm schedule: sigma_min, sigma_max, rho must be positive");
                 },
             },
             kind_);
  kappa_T_ = kappa(horizon_);
}

std::string NoiseSchedule::name() const {
  return std::visit(overloaded{[](const ConstantSchedule&) { return std::string("constant"); },
                               [](const GeometricSchedule&) { return std::string("geometric"); },
                               [](const EdmVeSchedule&) { return std::string("edm_ve"); }},
                    kind_);
}

void NoiseSchedule::check_time(double t, const char* op) const {
  if (!(t >= 0.0 && t <= horizon_)) {
    std::ostringstream os;
    os << op << ": t=" << t << " outside [0, " << horizon_ << "]";
    throw DomainError(os.str());
  }
}

double NoiseSchedule::sigma(double t) const {
  check_time(t, "sigma");
  const double s = t / horizon_;
  return std::visit(overloaded{
                        [](const ConstantSchedule& c) { return c.sigma; },
                        [s](const GeometricSchedule& g) {
                          const double r = g.sigma_max / g.sigma_min;
                          return g.sigma_min * std::pow(r, 1.0 - s) * std::sqrt(2.0 * std::log(r));
                        },
                        [s](const EdmVeSchedule& e) {
                          const double a = std::pow(e.sigma_max, 1.0 / e.rho);
                          const double b = std::pow(e.sigma_min, 1.0 / e.rho);
                          return std::pow((1.0 - s) * a + s * b, e.rho);
                        },
                    },
                    kind_);
}

// Closed-form antiderivatives of sigma^2 on the unit interval. The time change
// t = T s gives kappa(t) = T * kappa_unit(t / T).
double NoiseSchedule::kappa_unit(double s) const {
  return std::visit(overloaded{
                        [s](const ConstantSchedule& c) { return c.sigma * c.sigma * s; },
                        [s](const GeometricSchedule& g) {
                          // sigma^2 = 2 ln r * smin^2 r^(2(1-s))  =>  kappa = smin^2 (r^2 - r^(2(1-s)))
                          //        = smin^2 r^2 (1 - exp(-2 s ln r))
                          const double r = g.sigma_max / g.sigma_min;
                          const double lr = std::log(r);
                          return -g.sigma_max * g.sigma_max * std::expm1(-2.0 * s * lr);
                        },
                        [s](const EdmVeSchedule& e) {
                          const double a = std::pow(e.sigma_max, 1.0 / e.rho);
                          const double b = std::pow(e.sigma_min, 1.0 / e.rho);
                          const double n = 2.0 * e.rho + 1.0;
                          const double slope = b - a;
                          if (std::abs(slope) <= 1e-15 * a) return std::pow(a, 2.0 * e.rho) * s;
                          // (L^n - a^n) / (n (b - a)) with L = a + s (b - a), written to avoid cancellation.
                          const double rel = s * slope / a;
                          return std::pow(a, n) * std::expm1(n * std::log1p(rel)) / (n * slope);
                        },
                    },
                    kind_);
}

double NoiseSchedule::remaining_unit(double s) const {
  const double u = 1.0 - s;
  return std::visit(overloaded{
                        [u](const ConstantSchedule& c) { return c.sigma * c.sigma * u; },
                        [u](const GeometricSchedule& g) {
                          const double lr = std::log(g.sigma_max / g.sigma_min);
                          return g.sigma_min * g.sigma_min * std::expm1(2.0 * u * lr);
                        },
                        [u](const EdmVeSchedule& e) {
                          const double a = std::pow(e.sigma_max, 1.0 / e.rho);
                          const double b = std::pow(e.sigma_min, 1.0 / e.rho);
                          const double n = 2.0 * e.rho + 1.0;
                          const double slope = a - b;
                          if (std::abs(slope) <= 1e-15 * b) return std::pow(b, 2.0 * e.rho) * u;
                          return std::pow(b, n) * std::expm1(n * std::log1p(u * slope / b)) / (n * slope);
                        },
                    },
                    kind_);
}

double NoiseSchedule::kappa_remaining(double t) const {
  check_time(t, "kappa_remaining");
  if (const auto* c = std::get_if<ConstantSchedule>(&kind_)) return c->sigma * c->sigma * (horizon_ - t);
  return horizon_ * remaining_unit(t / horizon_);
}

double NoiseSchedule::one_minus_gamma(double t) const {
  if (t == 0.0) return 1.0;
  return kappa_remaining(t) / kappa_T_;
}

double NoiseSchedule::kappa(double t) const {
  check_time(t, "kappa");
  double k;
  if (const auto* c = std::get_if<ConstantSchedule>(&kind_))
    k = c->sigma * c->sigma * t;
  else
    k = horizon_ * kappa_unit(t / horizon_);
  if (kappa_fault_ != 0.0 && t > 0.0 && t < horizon_) k *= 1.0 + kappa_fault_;
  return k;
}

double NoiseSchedule::gamma(double t) const {
  check_time(t, "gamma");
  if (t == horizon_) return 1.0;
  return kappa(t) / kappa_T_;
}

double NoiseSchedule::omega(double t) const {
  check_time(t, "omega");
  if (t == 0.0) return 0.0;
  const double sg = sigma(t);
  return kappa(t) / (sg * sg);
}

}  // namespace bms
