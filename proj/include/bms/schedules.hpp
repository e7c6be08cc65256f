#pragma once

#include <string>
#include <variant>

namespace bms {

struct ConstantSchedule {
  double sigma = 2.5;
};

/// sigma(t) = sigma_min * r^(1 - t/T) * sqrt(2 ln r), r = sigma_max / sigma_min.
struct GeometricSchedule {
  double sigma_min = 0.5;
  double sigma_max = 1.5;
};

/// sigma(t) = [(1 - t/T) sigma_max^(1/rho) + (t/T) sigma_min^(1/rho)]^rho.
struct EdmVeSchedule {
  double sigma_min = 0.001;
  double sigma_max = 6.0;
  double rho = 3.0;
};

using ScheduleKind = std::variant<ConstantSchedule, GeometricSchedule, EdmVeSchedule>;

/// Scalar diffusion coefficient sigma(t) on [0, T] and its integrals.
///
/// kappa(t) = int_0^t sigma^2(s) ds, gamma(t) = kappa(t) / kappa(T),
/// omega(t) = kappa(t) / sigma^2(t). Immutable after construction.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(ScheduleKind kind = ConstantSchedule{}, double horizon = 1.0);

  static NoiseSchedule constant(double sigma, double horizon = 1.0) {
    return NoiseSchedule(ConstantSchedule{sigma}, horizon);
  }
  static NoiseSchedule geometric(double sigma_min, double sigma_max, double horizon = 1.0) {
    return NoiseSchedule(GeometricSchedule{sigma_min, sigma_max}, horizon);
  }
  static NoiseSchedule edm_ve(double sigma_min, double sigma_max, double rho, double horizon = 1.0) {
    return NoiseSchedule(EdmVeSchedule{sigma_min, sigma_max, rho}, horizon);
  }

  const ScheduleKind& kind() const { return kind_; }
  double horizon() const { return horizon_; }
  std::string name() const;

  double sigma(double t) const;
  double kappa(double t) const;
  double gamma(double t) const;
  double omega(double t) const;
  double kappa_total() const { return kappa_T_; }
  /// kappa(T) - kappa(t), evaluated without cancellation near t = T.
  double kappa_remaining(double t) const;
  /// 1 - gamma(t), same treatment.
  double one_minus_gamma(double t) const;

 private:
  friend struct ScheduleTestAccess;

  void check_time(double t, const char* op) const;
  double kappa_unit(double s) const;       // kappa on the unit interval, s = t / T
  double remaining_unit(double s) const;   // int_s^1 of the unit-interval sigma^2

  ScheduleKind kind_;
  double horizon_;
  double kappa_T_ = 0.0;
  double kappa_fault_ = 0.0;  // relative perturbation; nonzero only through the test hook
};

/// Fault injection for the oracle self-check: scales kappa(t) by (1 + rel) for t in (0, T).
/// kappa_remaining keeps its own closed form, so the two drift apart.
struct ScheduleTestAccess {
  static void inject_kappa_fault(NoiseSchedule& s, double rel) { s.kappa_fault_ = rel; }
};

}  // namespace bms
