#pragma once

// Closed forms for Gaussian endpoint couplings under the scaled Brownian
// reference. Everything is isotropic: per-coordinate scalar variances with
// vector means, and the coupling covariance Cov(X0_i, XT_i) = C per coordinate
// (C = 0 for the independent coupling).
//
// With (X0, XT) jointly Gaussian and X_t drawn from the reference bridge,
//   m(t) = (1-g) mu0 + g muT
//   V(t) = (1-g)^2 a^2 + g^2 b^2 + 2 g (1-g) C + kT g (1-g)
// and the forward / backward drifts are the conditional expectations
//   u*(x,t) = sigma/kT [ (muT - mu0) + ((1-2g) C + g b^2 - (1-g) a^2 - kT g) (x - m)/V ]
//   v*(x,t) = sigma/kT [ -(muT - mu0) + ((1-g) a^2 - (1-2g) C - g b^2 - kT (1-g)) (x - m)/V ]
// written without 1/(1-g) or 1/g factors so they stay regular on [0, T].

#include "bms/couplings.hpp"
#include "bms/field.hpp"
#include "bms/schedules.hpp"
#include "bms/targets.hpp"
#include "bms/types.hpp"

namespace bms::oracle {

struct GaussianPair {
  Vec mu0;
  double s0 = 1.0;
  Vec muT;
  double sT = 1.0;
  NoiseSchedule schedule;
  double coupling_cov = 0.0;  // C; 0 is the independent coupling

  std::size_t dim() const { return mu0.size(); }
  PriorDistribution prior() const;
  GaussianTarget target(double log_z = 0.0) const;
};

struct Marginal {
  Vec mean;
  double var;
};

Marginal gaussian_marginal(const GaussianPair& p, double t);
/// grad log Pi*_t(x) = -(x - m)/V
Vec gaussian_marginal_score(const GaussianPair& p, CSpan x, double t);
double gaussian_marginal_log_density(const GaussianPair& p, CSpan x, double t);

Vec gaussian_optimal_drift(const GaussianPair& p, CSpan x, double t);
Vec gaussian_backward_drift(const GaussianPair& p, CSpan x, double t);

/// Linear form of the optimal drift per coordinate: u*_i(x, t) = slope * x_i + offset_i.
struct LinearDrift {
  double slope;
  Vec offset;
};
LinearDrift gaussian_optimal_drift_coefficients(const GaussianPair& p, double t);
LinearDrift gaussian_backward_drift_coefficients(const GaussianPair& p, double t);

/// Static Schrodinger bridge between N(mu0, a^2) and N(muT, b^2) under the
/// reference with total variance kT. The coupling is Gaussian with
/// Cov(X0, XT) = C = (-kT + sqrt(kT^2 + 4 a^2 b^2)) / 2 and the terminal
/// potential phi_T(x) = exp(-p x^2 / 2 + h x), p = L11 - 1/kT, h = L11 muT - mu0/kT,
/// where L is the joint precision.
struct GaussianSb {
  double C;
  double L00, L01, L11;  // joint precision entries
  double p;
  Vec h;
};

GaussianSb gaussian_sb(const GaussianPair& p);
/// The pair with coupling_cov set to the SB coupling covariance.
GaussianPair with_sb_coupling(GaussianPair p);

/// grad log phi_hat_T(x) = grad log Pi_T(x) - grad log phi_T(x) = -(x - muT)/b^2 + p x - h
VectorFn gaussian_sb_corrector(const GaussianPair& p);

/// Markov SB drift sigma(t) grad log phi_t(x) = sigma (h - p x) / (1 + p (kT - k(t))).
Vec gaussian_sb_drift(const GaussianPair& p, CSpan x, double t);

/// Gradients of the joint coupling log-density w.r.t. x0 and xT.
JointScoreFn joint_gaussian_score_0(const GaussianPair& p);
JointScoreFn joint_gaussian_score_T(const GaussianPair& p);

/// Batch fields built from the closed forms above (linear, so the divergence is exact).
FunctionField optimal_drift_field(const GaussianPair& p);
FunctionField backward_drift_field(const GaussianPair& p);
/// sigma(t) grad log Pi*_t
FunctionField scaled_score_field(const GaussianPair& p);
FunctionField sb_drift_field(const GaussianPair& p);

}  // namespace bms::oracle
