#include "bms/oracle.hpp"

#include <cmath>

#include "bms/errors.hpp"
#include "bms/reference.hpp"

namespace bms::oracle {

namespace {

void check(const GaussianPair& p) {
  if (!(p.s0 >= 0.0) || !(p.sT > 0.0)) throw DomainError("gaussian pair: scales must be positive");
  if (p.mu0.size() != p.muT.size() || p.mu0.empty()) throw ShapeError("gaussian pair: mean dimension mismatch");
}

struct Coeffs {
  double g, h, kT, sigma, V;
};

Coeffs coeffs(const GaussianPair& p, double t) {
  check(p);
  const auto& s = p.schedule;
  const double g = s.gamma(t), h = s.one_minus_gamma(t), kT = s.kappa_total();
  const double a2 = p.s0 * p.s0, b2 = p.sT * p.sT, C = p.coupling_cov;
  const double V = h * h * a2 + g * g * b2 + 2.0 * g * h * C + kT * g * h;
  return {g, h, kT, s.sigma(t), V};
}

}  // namespace

PriorDistribution GaussianPair::prior() const {
  return s0 > 0.0 ? PriorDistribution::gaussian(mu0, s0) : PriorDistribution::dirac(mu0);
}

GaussianTarget GaussianPair::target(double log_z) const { return GaussianTarget(muT, sT, log_z); }

Marginal gaussian_marginal(const GaussianPair& p, double t) {
  const auto c = coeffs(p, t);
  Marginal m{Vec(p.dim()), c.V};
  for (std::size_t i = 0; i < p.dim(); ++i) m.mean[i] = c.h * p.mu0[i] + c.g * p.muT[i];
  return m;
}

Vec gaussian_marginal_score(const GaussianPair& p, CSpan x, double t) {
  const auto m = gaussian_marginal(p, t);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = -(x[i] - m.mean[i]) / m.var;
  return out;
}

double gaussian_marginal_log_density(const GaussianPair& p, CSpan x, double t) {
  const auto m = gaussian_marginal(p, t);
  return reference::log_normal_isotropic(x, m.mean, m.var);
}

LinearDrift gaussian_optimal_drift_coefficients(const GaussianPair& p, double t) {
  const auto c = coeffs(p, t);
  const double a2 = p.s0 * p.s0, b2 = p.sT * p.sT, C = p.coupling_cov;
  const double k = ((1.0 - 2.0 * c.g) * C + c.g * b2 - c.h * a2 - c.kT * c.g) / c.V;
  LinearDrift L{c.sigma / c.kT * k, Vec(p.dim())};
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const double m = c.h * p.mu0[i] + c.g * p.muT[i];
    L.offset[i] = c.sigma / c.kT * ((p.muT[i] - p.mu0[i]) - k * m);
  }
  return L;
}

LinearDrift gaussian_backward_drift_coefficients(const GaussianPair& p, double t) {
  const auto c = coeffs(p, t);
  const double a2 = p.s0 * p.s0, b2 = p.sT * p.sT, C = p.coupling_cov;
  const double k = (c.h * a2 - (1.0 - 2.0 * c.g) * C - c.g * b2 - c.kT * c.h) / c.V;
  LinearDrift L{c.sigma / c.kT * k, Vec(p.dim())};
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const double m = c.h * p.mu0[i] + c.g * p.muT[i];
    L.offset[i] = c.sigma / c.kT * (-(p.muT[i] - p.mu0[i]) - k * m);
  }
  return L;
}

namespace {

Vec apply_linear(const LinearDrift& L, CSpan x) {
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = L.slope * x[i] + L.offset[i];
  return out;
}

}  // namespace

Vec gaussian_optimal_drift(const GaussianPair& p, CSpan x, double t) {
  if (x.size() != p.dim()) throw ShapeError("gaussian_optimal_drift: dimension mismatch");
  return apply_linear(gaussian_optimal_drift_coefficients(p, t), x);
}

Vec gaussian_backward_drift(const GaussianPair& p, CSpan x, double t) {
  if (x.size() != p.dim()) throw ShapeError("gaussian_backward_drift: dimension mismatch");
  return apply_linear(gaussian_backward_drift_coefficients(p, t), x);
}

GaussianSb gaussian_sb(const GaussianPair& p) {
  check(p);
  const double a2 = p.s0 * p.s0, b2 = p.sT * p.sT, kT = p.schedule.kappa_total();
  GaussianSb sb;
  if (a2 == 0.0) {
    // Dirac start: the coupling is the reference transition itself.
    sb.C = 0.0;
    sb.L00 = 0.0;
    sb.L01 = 0.0;
    sb.L11 = 1.0 / b2;
  } else {
    sb.C = 0.5 * (-kT + std::sqrt(kT * kT + 4.0 * a2 * b2));
    const double det = a2 * b2 - sb.C * sb.C;
    sb.L00 = b2 / det;
    sb.L01 = -sb.C / det;
    sb.L11 = a2 / det;
  }
  sb.p = sb.L11 - 1.0 / kT;
  sb.h.resize(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) sb.h[i] = sb.L11 * p.muT[i] - p.mu0[i] / kT;
  return sb;
}

GaussianPair with_sb_coupling(GaussianPair p) {
  p.coupling_cov = gaussian_sb(p).C;
  return p;
}

VectorFn gaussian_sb_corrector(const GaussianPair& p) {
  const auto sb = gaussian_sb(p);
  const double b2 = p.sT * p.sT;
  return [sb, b2, muT = p.muT](CSpan x, MSpan out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = -(x[i] - muT[i]) / b2 + sb.p * x[i] - sb.h[i];
  };
}

Vec gaussian_sb_drift(const GaussianPair& p, CSpan x, double t) {
  const auto sb = gaussian_sb(p);
  const double r = p.schedule.kappa_remaining(t);
  const double sg = p.schedule.sigma(t);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sg * (sb.h[i] - sb.p * x[i]) / (1.0 + sb.p * r);
  return out;
}

JointScoreFn joint_gaussian_score_0(const GaussianPair& p) {
  check(p);
  const double a2 = p.s0 * p.s0, b2 = p.sT * p.sT, C = p.coupling_cov;
  const double det = a2 * b2 - C * C;
  if (!(det > 0.0)) throw DomainError("joint gaussian score: singular coupling covariance");
  const double L00 = b2 / det, L01 = -C / det;
  return [L00, L01, mu0 = p.mu0, muT = p.muT](CSpan x0, CSpan xT, MSpan out) {
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = -L00 * (x0[i] - mu0[i]) - L01 * (xT[i] - muT[i]);
  };
}

JointScoreFn joint_gaussian_score_T(const GaussianPair& p) {
  check(p);
  const double a2 = p.s0 * p.s0, b2 = p.sT * p.sT, C = p.coupling_cov;
  const double det = a2 * b2 - C * C;
  if (!(det > 0.0)) throw DomainError("joint gaussian score: singular coupling covariance");
  const double L11 = a2 / det, L01 = -C / det;
  return [L11, L01, mu0 = p.mu0, muT = p.muT](CSpan x0, CSpan xT, MSpan out) {
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = -L01 * (x0[i] - mu0[i]) - L11 * (xT[i] - muT[i]);
  };
}

}  // namespace bms::oracle

namespace bms::oracle {

namespace {

// u(x, t)_i = slope(t) x_i + offset(t)_i
FunctionField linear_field(std::size_t d, std::function<LinearDrift(double)> coef) {
  return FunctionField(
      d,
      [coef](const Matrix& x, double t, Matrix& out) {
        const LinearDrift L = coef(t);
        for (std::size_t r = 0; r < x.rows; ++r)
          for (std::size_t j = 0; j < x.cols; ++j) out(r, j) = L.slope * x(r, j) + L.offset[j];
      },
      [coef, d](const Matrix&, double t, Vec& out) {
        const double dv = coef(t).slope * static_cast<double>(d);
        std::fill(out.begin(), out.end(), dv);
      });
}

}  // namespace

FunctionField optimal_drift_field(const GaussianPair& p) {
  return linear_field(p.dim(), [p](double t) { return gaussian_optimal_drift_coefficients(p, t); });
}

FunctionField backward_drift_field(const GaussianPair& p) {
  return linear_field(p.dim(), [p](double t) { return gaussian_backward_drift_coefficients(p, t); });
}

FunctionField scaled_score_field(const GaussianPair& p) {
  return linear_field(p.dim(), [p](double t) {
    const Marginal m = gaussian_marginal(p, t);
    const double sg = p.schedule.sigma(t);
    LinearDrift L{-sg / m.var, Vec(p.dim())};
    for (std::size_t i = 0; i < p.dim(); ++i) L.offset[i] = sg * m.mean[i] / m.var;
    return L;
  });
}

FunctionField sb_drift_field(const GaussianPair& p) {
  const GaussianSb sb = gaussian_sb(p);
  return linear_field(p.dim(), [p, sb](double t) {
    const double sg = p.schedule.sigma(t), den = 1.0 + sb.p * p.schedule.kappa_remaining(t);
    LinearDrift L{-sg * sb.p / den, Vec(p.dim())};
    for (std::size_t i = 0; i < p.dim(); ++i) L.offset[i] = sg * sb.h[i] / den;
    return L;
  });
}

}  // namespace bms::oracle
