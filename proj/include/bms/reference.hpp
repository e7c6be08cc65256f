#pragma once

// Scaled Brownian motion dX = sigma(t) dB and its bridge.
//
//   P_{t|0}(x_t | x_0)   = N(x_0, kappa(t) I)
//   P_{T|t}(x_T | x_t)   = N(x_t, (kappa(T) - kappa(t)) I)
//   P_{t|0,T}            = N((1-gamma) x_0 + gamma x_T, kappa(T) gamma (1-gamma) I)
//
// Scores are taken with respect to x_t. Queries within singular_guard of the
// singular endpoint throw SingularTimeError.

#include <span>

#include "bms/rng.hpp"
#include "bms/schedules.hpp"
#include "bms/types.hpp"

namespace bms::reference {

inline constexpr double singular_guard = 1e-9;

void sample_bridge(const NoiseSchedule& s, CSpan x0, CSpan xT, double t, Rng& rng, MSpan out);
Vec sample_bridge(const NoiseSchedule& s, CSpan x0, CSpan xT, double t, Rng& rng);

/// (x0 - xt) / kappa(t)
void score_t_given_0(const NoiseSchedule& s, CSpan x0, CSpan xt, double t, MSpan out);
Vec score_t_given_0(const NoiseSchedule& s, CSpan x0, CSpan xt, double t);

/// (xT - xt) / (kappa(T) - kappa(t))
void score_T_given_t(const NoiseSchedule& s, CSpan xt, CSpan xT, double t, MSpan out);
Vec score_T_given_t(const NoiseSchedule& s, CSpan xt, CSpan xT, double t);

/// (-xt + (1-gamma) x0 + gamma xT) / (kappa(T) gamma (1-gamma))
void score_bridge(const NoiseSchedule& s, CSpan x0, CSpan xT, CSpan xt, double t, MSpan out);
Vec score_bridge(const NoiseSchedule& s, CSpan x0, CSpan xT, CSpan xt, double t);

/// sigma(t) (xT - x) / (kappa(T) - kappa(t)): drift that pins dX = drift dt + sigma dB to xT.
void brownian_bridge_drift(const NoiseSchedule& s, CSpan x, CSpan xT, double t, MSpan out);
Vec brownian_bridge_drift(const NoiseSchedule& s, CSpan x, CSpan xT, double t);

// Log-densities, used by tests and diagnostics.
double log_density_t_given_0(const NoiseSchedule& s, CSpan x0, CSpan xt, double t);
double log_density_T_given_t(const NoiseSchedule& s, CSpan xt, CSpan xT, double t);
double log_density_bridge(const NoiseSchedule& s, CSpan x0, CSpan xT, CSpan xt, double t);

/// log N(x | mean, var I)
double log_normal_isotropic(CSpan x, CSpan mean, double var);

}  // namespace bms::reference
