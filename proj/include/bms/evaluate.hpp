#pragma once

// Sample-quality metrics, path-space importance weights and probability-flow
// likelihoods.

#include <cstdint>
#include <optional>
#include <vector>

#include "bms/checkpoint.hpp"
#include "bms/field.hpp"
#include "bms/targets.hpp"
#include "bms/trainer.hpp"
#include "bms/types.hpp"

namespace bms {

struct MetricsReport {
  std::optional<double> mode_tvd;
  std::optional<double> sliced_tvd;
  std::optional<double> w2;
  std::optional<double> energy_w2;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  Json to_json() const;
};

/// 1/2 sum_k |pi_k - pi_hat_k| with pi_hat from nearest-mode counts.
double mode_tvd(const GmmTarget& g, const Matrix& samples);

/// Mean over P random unit directions of the 1-D histogram TVD; bins span the
/// pooled min/max of each projection.
double sliced_tvd(const Matrix& a, const Matrix& b, std::size_t projections = 100, std::size_t bins = 50,
                  std::uint64_t seed = 0);

/// Minimum-cost perfect matching on a dense n x n cost matrix (row major).
/// Returns col[i] for each row i. Shortest augmenting paths with potentials, O(n^3).
std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n);

constexpr std::size_t kMaxW2Samples = 4096;

/// Exact W2 between two equal-size point sets under squared Euclidean cost.
/// Throws ShapeError on size mismatch and DomainError above kMaxW2Samples.
double wasserstein2(const Matrix& a, const Matrix& b);

/// W2 between two 1-D empirical laws via the quantile coupling (sizes may differ).
double wasserstein2_1d(std::vector<double> a, std::vector<double> b);

/// 1-D W2 between the energies of two sample sets.
double energy_w2(const TargetDensity& target, const Matrix& a, const Matrix& b);

/// Pairwise distances within each sample for a system of `particles` particles.
std::vector<double> interatomic_distances(const Matrix& x, std::size_t particles);

struct Histogram {
  double lo = 0.0, hi = 1.0;
  std::vector<double> density;  // normalized to integrate to one
};
Histogram histogram(const std::vector<double>& v, std::size_t bins, double lo, double hi);

// ------------------------------------------------------- importance weights

/// log of the discrete Radon-Nikodym derivative between the backward chain
/// driven by v (started at the target) and the forward Euler chain driven by u:
///
///   log w = log rho(X_N) - log p0(X_0)
///         + sum_k [ |D_k - s_k u_k dt|^2 - |D_k + s_k v_{k+1} dt|^2 ] / (2 s_k^2 dt)
///
/// with D_k = X_{k+1} - X_k, s_k = sigma(t_k), u_k = u(X_k, t_k), v_{k+1} = v(X_{k+1}, t_{k+1}).
/// E[w] = Z exactly for any u, v; as dt -> 0 this is the Girsanov weight under
/// u + v = sigma grad log Pi_t. Throws UnsupportedCouplingError for a Dirac prior.
Vec path_log_weights(const ControlField& u, const ControlField& v, const Trajectory& traj,
                     const PriorDistribution& prior, const TargetDensity& target, const NoiseSchedule& s);

struct ImportanceEstimate {
  Vec log_weights;
  double ess = 0.0;
  double log_z = 0.0;
  double log_z_se = 0.0;    // delta-method standard error of log_z
  double observable = 0.0;  // NaN when no observable was given
};

/// Self-normalized estimate; throws DegenerateError when every weight is zero.
ImportanceEstimate snis_estimate(const Vec& log_weights, const Vec& observable = {});

// --------------------------------------------------------- probability flow

enum class DivergenceMode { Exact, FiniteDifference };

struct PfOdeResult {
  Matrix samples;
  Vec log_density;
};

/// RK4 on dX = f dt, f = sigma u - 1/2 sigma s, from t_start to T, carrying
/// d log p = -div f dt. s approximates sigma grad log Pi_t. Exact mode uses the
/// fields' own divergence (reverse mode for networks, d <= 16); the FD mode uses
/// central differences with step 1e-4.
PfOdeResult pf_ode_log_likelihood(const ControlField& u, const ControlField& s, const Matrix& x0,
                                  const PriorDistribution& prior, const NoiseSchedule& sched, std::size_t n_steps,
                                  double t_start = 0.0, DivergenceMode mode = DivergenceMode::Exact);

}  // namespace bms
