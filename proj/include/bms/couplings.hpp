#pragma once

// Path-dependent regression targets xi for the couplings of the bridge
// matching family, plus the control-variate machinery.
//
// Convention: every xi_* returns sigma(t) * [ ... ], the same units as the
// control u in the controlled SDE dX = sigma(t) u dt + sigma(t) dB. The
// trainer regresses u_theta directly onto xi.

#include <functional>

#include "bms/drift_model.hpp"
#include "bms/schedules.hpp"
#include "bms/targets.hpp"
#include "bms/types.hpp"

namespace bms {

/// x -> vector field (e.g. the corrector grad log phi_hat_T).
using VectorFn = std::function<void(CSpan x, MSpan out)>;
/// (x0, xT) -> gradient of the joint coupling log-density w.r.t. one endpoint.
using JointScoreFn = std::function<void(CSpan x0, CSpan xT, MSpan out)>;

enum class CouplingKind { BmsIndependent, AsReverseConditional, SbJoint, GeneralAnalytic };

std::string coupling_name(CouplingKind k);
CouplingKind coupling_from_name(const std::string& name);

struct Coupling {
  CouplingKind kind = CouplingKind::BmsIndependent;
  VectorFn corrector;                    // SbJoint
  JointScoreFn joint_score_0, joint_score_T;  // GeneralAnalytic

  static Coupling bms() { return {}; }
  static Coupling as() { return {CouplingKind::AsReverseConditional, {}, {}, {}}; }
  static Coupling sb(VectorFn corrector);
  static Coupling general(JointScoreFn s0, JointScoreFn sT);
};

/// Interpolation weight c(t) between the two boundary-score estimators.
struct CvSchedule {
  enum class Kind { FixedGamma, FixedFunction, Learned };
  Kind kind = Kind::FixedGamma;
  std::function<double(double)> c;               // FixedFunction
  const ControlVariateNet* net = nullptr;        // Learned (not owned)

  static CvSchedule fixed_gamma() { return {}; }
  static CvSchedule fixed_function(std::function<double(double)> c);
  static CvSchedule learned(const ControlVariateNet* net);
};

struct CvCoefficients {
  double a0;  // multiplies the x0-side score
  double aT;  // multiplies the xT-side score
};

double cv_value(const CvSchedule& cv, const NoiseSchedule& s, double t);
/// a0 = (1-c)/(1-gamma), aT = c/gamma. Throws SingularTimeError at the endpoints for FixedFunction.
CvCoefficients cv_coefficients(const CvSchedule& cv, const NoiseSchedule& s, double t);

/// Reference terminal marginal P_T = N(m, var I) when started from the prior.
struct GaussianMarginal {
  Vec mean;
  double var;
};
GaussianMarginal reference_terminal(const PriorDistribution& prior, const NoiseSchedule& s);
/// x -> (mean - x) / var
VectorFn gaussian_score_fn(GaussianMarginal g);

/// sigma [a0 grad log p_prior(x0) + aT grad log p_target(xT) - (x0 - xt)/kappa(t)]
void xi_bms(const PriorDistribution& prior, const TargetDensity& target, const NoiseSchedule& s, const CvSchedule& cv,
            CSpan x0, CSpan xT, CSpan xt, double t, MSpan out);
Vec xi_bms(const PriorDistribution& prior, const TargetDensity& target, const NoiseSchedule& s, const CvSchedule& cv,
           CSpan x0, CSpan xT, CSpan xt, double t);

/// sigma grad_xT log(rho_target(xT) / P_T(xT)); equals xi_sb with the P_T score as corrector.
void xi_as(const GaussianMarginal& PT, const TargetDensity& target, const NoiseSchedule& s, CSpan xT, double t,
           MSpan out);
Vec xi_as(const GaussianMarginal& PT, const TargetDensity& target, const NoiseSchedule& s, CSpan xT, double t);

/// sigma [grad log rho_target(xT) - corrector(xT)]
void xi_sb(const VectorFn& corrector, const TargetDensity& target, const NoiseSchedule& s, CSpan xT, double t,
           MSpan out);
Vec xi_sb(const VectorFn& corrector, const TargetDensity& target, const NoiseSchedule& s, CSpan xT, double t);

/// sigma [a0 s0(x0,xT) + aT sT(x0,xT) - (x0 - xt)/kappa(t)]
void xi_general(const JointScoreFn& s0, const JointScoreFn& sT, const NoiseSchedule& s, const CvSchedule& cv, CSpan x0,
                CSpan xT, CSpan xt, double t, MSpan out);
Vec xi_general(const JointScoreFn& s0, const JointScoreFn& sT, const NoiseSchedule& s, const CvSchedule& cv, CSpan x0,
               CSpan xT, CSpan xt, double t);

/// sigma [((1-c) gamma/(1-gamma)) s0 + c sT - (x0 - xT)/kappa(T)]; no 1/kappa(t) term.
void xi_alternative(const JointScoreFn& s0, const JointScoreFn& sT, const NoiseSchedule& s, const CvSchedule& cv,
                    CSpan x0, CSpan xT, double t, MSpan out);
Vec xi_alternative(const JointScoreFn& s0, const JointScoreFn& sT, const NoiseSchedule& s, const CvSchedule& cv,
                   CSpan x0, CSpan xT, double t);

/// Product joint scores of an independent coupling prior (x) target.
JointScoreFn independent_score_0(const PriorDistribution& prior);
JointScoreFn independent_score_T(const TargetDensity& target);

/// Empirical variance-minimizing scalar c*(t) from a batch (rows) at fixed t.
/// Variances are mean squared norms of the (optionally centered) estimators.
double optimal_scalar_cv(const Matrix& x0, const Matrix& xT, const Matrix& xt, double t, const JointScoreFn& s0,
                         const JointScoreFn& sT, const NoiseSchedule& s, bool centered = true);

}  // namespace bms
