#include "bms/couplings.hpp"

#include <cmath>

#include "bms/errors.hpp"
#include "bms/reference.hpp"

namespace bms {

namespace {

void check_interior(const NoiseSchedule& s, double t, const char* op) {
  if (t < 0.0 || t > s.horizon()) throw DomainError(std::string(op) + ": t outside [0, T]");
  if (t <= reference::singular_guard || t >= s.horizon() - reference::singular_guard)
    throw SingularTimeError(std::string(op) + ": coefficients are singular at the endpoints", t);
}

void check_low(const NoiseSchedule& s, double t, const char* op) {
  if (t < 0.0 || t > s.horizon()) throw DomainError(std::string(op) + ": t outside [0, T]");
  if (t <= reference::singular_guard) throw SingularTimeError(std::string(op) + ": 1/kappa(t) is singular at t = 0", t);
}

// sigma [a0 g0 + aT gT - (x0 - xt) / kappa]; shared by xi_bms and xi_general so
// that identical scores give bitwise-identical targets.
void combine(double sigma, const CvCoefficients& a, CSpan g0, CSpan gT, CSpan x0, CSpan xt, double kappa, MSpan out) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigma * (a.a0 * g0[i] + a.aT * gT[i] - (x0[i] - xt[i]) / kappa);
}

void same_dims(std::size_t a, std::size_t b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": dimension mismatch");
}

}  // namespace

std::string coupling_name(CouplingKind k) {
  switch (k) {
    case CouplingKind::BmsIndependent:
      return "bms";
    case CouplingKind::AsReverseConditional:
      return "as";
    case CouplingKind::SbJoint:
      return "sb";
    case CouplingKind::GeneralAnalytic:
      return "general";
  }
  return "bms";
}

CouplingKind coupling_from_name(const std::string& name) {
  if (name == "bms") return CouplingKind::BmsIndependent;
  if (name == "as") return CouplingKind::AsReverseConditional;
  if (name == "sb") return CouplingKind::SbJoint;
  if (name == "general") return CouplingKind::GeneralAnalytic;
  throw DomainError("unknown coupling '" + name + "' (expected bms, as, sb or general)");
}

Coupling Coupling::sb(VectorFn corrector) {
  if (!corrector) throw ConfigError("sb coupling requires a corrector", "coupling.corrector");
  return {CouplingKind::SbJoint, std::move(corrector), {}, {}};
}

Coupling Coupling::general(JointScoreFn s0, JointScoreFn sT) {
  if (!s0 || !sT) throw ConfigError("general coupling requires both joint scores", "coupling");
  return {CouplingKind::GeneralAnalytic, {}, std::move(s0), std::move(sT)};
}

CvSchedule CvSchedule::fixed_function(std::function<double(double)> c) {
  if (!c) throw ConfigError("fixed-function control variate needs a function", "cv");
  CvSchedule s;
  s.kind = Kind::FixedFunction;
  s.c = std::move(c);
  return s;
}

CvSchedule CvSchedule::learned(const ControlVariateNet* net) {
  if (!net) throw ConfigError("learned control variate needs a network", "cv");
  CvSchedule s;
  s.kind = Kind::Learned;
  s.net = net;
  return s;
}

double cv_value(const CvSchedule& cv, const NoiseSchedule& s, double t) {
  switch (cv.kind) {
    case CvSchedule::Kind::FixedGamma:
      return s.gamma(t);
    case CvSchedule::Kind::FixedFunction:
      return cv.c(t);
    case CvSchedule::Kind::Learned:
      return cv.net->c(s, t);
  }
  return s.gamma(t);
}

CvCoefficients cv_coefficients(const CvSchedule& cv, const NoiseSchedule& s, double t) {
  switch (cv.kind) {
    case CvSchedule::Kind::FixedGamma:
      return {1.0, 1.0};
    case CvSchedule::Kind::Learned: {
      const double nn = cv.net->nn(t);
      return {1.0 - s.gamma(t) * nn, 1.0 + s.one_minus_gamma(t) * nn};
    }
    case CvSchedule::Kind::FixedFunction: {
      check_interior(s, t, "cv_coefficients");
      const double c = cv.c(t);
      return {(1.0 - c) / s.one_minus_gamma(t), c / s.gamma(t)};
    }
  }
  return {1.0, 1.0};
}

GaussianMarginal reference_terminal(const PriorDistribution& prior, const NoiseSchedule& s) {
  const double sp = prior.is_dirac() ? 0.0 : prior.scale();
  return {prior.mean(), sp * sp + s.kappa_total()};
}

VectorFn gaussian_score_fn(GaussianMarginal g) {
  return [g = std::move(g)](CSpan x, MSpan out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (g.mean[i] - x[i]) / g.var;
  };
}

JointScoreFn independent_score_0(const PriorDistribution& prior) {
  return [&prior](CSpan x0, CSpan, MSpan out) { prior.score(x0, out); };
}

JointScoreFn independent_score_T(const TargetDensity& target) {
  return [&target](CSpan, CSpan xT, MSpan out) { target.score(xT, out); };
}

void xi_bms(const PriorDistribution& prior, const TargetDensity& target, const NoiseSchedule& s, const CvSchedule& cv,
            CSpan x0, CSpan xT, CSpan xt, double t, MSpan out) {
  if (prior.is_dirac())
    throw UnsupportedCouplingError("xi_bms needs the prior score; a Dirac prior requires the reverse-conditional coupling");
  same_dims(x0.size(), xT.size(), "xi_bms");
  same_dims(x0.size(), xt.size(), "xi_bms");
  same_dims(x0.size(), out.size(), "xi_bms");
  check_low(s, t, "xi_bms");
  const auto a = cv_coefficients(cv, s, t);
  thread_local Vec g0, gT;
  g0.resize(x0.size());
  gT.resize(x0.size());
  prior.score(x0, g0);
  target.score(xT, gT);
  combine(s.sigma(t), a, g0, gT, x0, xt, s.kappa(t), out);
}

Vec xi_bms(const PriorDistribution& prior, const TargetDensity& target, const NoiseSchedule& s, const CvSchedule& cv,
           CSpan x0, CSpan xT, CSpan xt, double t) {
  Vec out(x0.size());
  xi_bms(prior, target, s, cv, x0, xT, xt, t, out);
  return out;
}

void xi_general(const JointScoreFn& s0, const JointScoreFn& sT, const NoiseSchedule& s, const CvSchedule& cv, CSpan x0,
                CSpan xT, CSpan xt, double t, MSpan out) {
  if (!s0 || !sT) throw ConfigError("xi_general requires both joint scores", "coupling");
  same_dims(x0.size(), xT.size(), "xi_general");
  same_dims(x0.size(), xt.size(), "xi_general");
  same_dims(x0.size(), out.size(), "xi_general");
  check_low(s, t, "xi_general");
  const auto a = cv_coefficients(cv, s, t);
  thread_local Vec g0, gT;
  g0.resize(x0.size());
  gT.resize(x0.size());
  s0(x0, xT, g0);
  sT(x0, xT, gT);
  combine(s.sigma(t), a, g0, gT, x0, xt, s.kappa(t), out);
}

Vec xi_general(const JointScoreFn& s0, const JointScoreFn& sT, const NoiseSchedule& s, const CvSchedule& cv, CSpan x0,
               CSpan xT, CSpan xt, double t) {
  Vec out(x0.size());
  xi_general(s0, sT, s, cv, x0, xT, xt, t, out);
  return out;
}

void xi_sb(const VectorFn& corrector, const TargetDensity& target, const NoiseSchedule& s, CSpan xT, double t,
           MSpan out) {
  if (!corrector) throw ConfigError("xi_sb requires a corrector", "coupling.corrector");
  same_dims(xT.size(), out.size(), "xi_sb");
  thread_local Vec c;
  c.resize(xT.size());
  target.score(xT, out);
  corrector(xT, c);
  const double sg = s.sigma(t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sg * (out[i] - c[i]);
}

Vec xi_sb(const VectorFn& corrector, const TargetDensity& target, const NoiseSchedule& s, CSpan xT, double t) {
  Vec out(xT.size());
  xi_sb(corrector, target, s, xT, t, out);
  return out;
}

void xi_as(const GaussianMarginal& PT, const TargetDensity& target, const NoiseSchedule& s, CSpan xT, double t,
           MSpan out) {
  same_dims(PT.mean.size(), xT.size(), "xi_as");
  xi_sb(gaussian_score_fn(PT), target, s, xT, t, out);
}

Vec xi_as(const GaussianMarginal& PT, const TargetDensity& target, const NoiseSchedule& s, CSpan xT, double t) {
  Vec out(xT.size());
  xi_as(PT, target, s, xT, t, out);
  return out;
}

void xi_alternative(const JointScoreFn& s0, const JointScoreFn& sT, const NoiseSchedule& s, const CvSchedule& cv,
                    CSpan x0, CSpan xT, double t, MSpan out) {
  if (!s0 || !sT) throw ConfigError("xi_alternative requires both joint scores", "coupling");
  same_dims(x0.size(), xT.size(), "xi_alternative");
  same_dims(x0.size(), out.size(), "xi_alternative");
  if (t < 0.0 || t > s.horizon()) throw DomainError("xi_alternative: t outside [0, T]");
  // gamma a0 = (1-c) gamma / (1-gamma) and gamma aT = c. FixedFunction is
  // singular at T (and rejected at 0 by cv_coefficients).
  const auto a = cv_coefficients(cv, s, t);
  const double g = s.gamma(t);
  const double w0 = g * a.a0, wT = g * a.aT;
  thread_local Vec g0, gT;
  g0.resize(x0.size());
  gT.resize(x0.size());
  s0(x0, xT, g0);
  sT(x0, xT, gT);
  const double sg = s.sigma(t), kT = s.kappa_total();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sg * (w0 * g0[i] + wT * gT[i] - (x0[i] - xT[i]) / kT);
}

Vec xi_alternative(const JointScoreFn& s0, const JointScoreFn& sT, const NoiseSchedule& s, const CvSchedule& cv,
                   CSpan x0, CSpan xT, double t) {
  Vec out(x0.size());
  xi_alternative(s0, sT, s, cv, x0, xT, t, out);
  return out;
}

double optimal_scalar_cv(const Matrix& x0, const Matrix& xT, const Matrix& xt, double t, const JointScoreFn& s0,
                         const JointScoreFn& sT, const NoiseSchedule& s, bool centered) {
  const std::size_t n = x0.rows, d = x0.cols;
  if (n < 2) throw DegenerateError("optimal_scalar_cv: need at least two samples");
  if (xT.rows != n || xt.rows != n || xT.cols != d || xt.cols != d) throw ShapeError("optimal_scalar_cv: shape mismatch");
  check_interior(s, t, "optimal_scalar_cv");
  const double g = s.gamma(t), h = s.one_minus_gamma(t), k = s.kappa(t);
  Matrix G0(n, d), GT(n, d), Gv(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    s0(x0.row(r), xT.row(r), G0.row(r));
    sT(x0.row(r), xT.row(r), GT.row(r));
    for (std::size_t i = 0; i < d; ++i) {
      G0(r, i) /= h;
      GT(r, i) /= g;
      Gv(r, i) = (x0(r, i) - xt(r, i)) / k;
    }
  }
  if (centered) {
    for (Matrix* m : {&G0, &GT, &Gv}) {
      for (std::size_t i = 0; i < d; ++i) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += (*m)(r, i);
        mean /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) (*m)(r, i) -= mean;
      }
    }
  }
  auto cov = [&](const Matrix& a, const Matrix& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
    return acc / static_cast<double>(n);
  };
  const double v0 = cov(G0, G0), vT = cov(GT, GT), c0T = cov(G0, GT), c0v = cov(G0, Gv), cTv = cov(GT, Gv);
  const double den = v0 + vT - 2.0 * c0T;
  if (!(std::abs(den) > 1e-14 * std::max(1.0, v0 + vT)))
    throw DegenerateError("optimal_scalar_cv: G0 and GT coincide over the batch (zero denominator)");
  return (v0 - c0T - c0v + cTv) / den;
}

}  // namespace bms
