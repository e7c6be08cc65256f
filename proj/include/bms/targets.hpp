#pragma once

#include <memory>
#include <optional>
#include <string>

#include "bms/rng.hpp"
#include "bms/types.hpp"

namespace bms {

/// Unnormalized target p(x) = rho(x) / Z. log_rho is in natural-log units.
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual double log_rho(CSpan x) const = 0;
  /// grad log rho(x)
  virtual void score(CSpan x, MSpan out) const = 0;
  Vec score(CSpan x) const;

  /// Energy used by the energy-W2 diagnostic; -log rho unless overridden.
  virtual double energy(CSpan x) const { return -log_rho(x); }

  virtual bool has_sampler() const { return false; }
  /// n exact samples as rows. Throws UnsupportedCouplingError without a sampler.
  virtual Matrix sample(std::size_t n, Rng& rng) const;

  /// log Z when the normalizer is known.
  virtual std::optional<double> log_normalizer() const { return std::nullopt; }
};

/// rho(x) = exp(log_z) * N(x | mean, scale^2 I), so Z = exp(log_z).
class GaussianTarget : public TargetDensity {
 public:
  GaussianTarget(Vec mean, double scale, double log_z = 0.0);

  std::string name() const override { return "gaussian"; }
  std::size_t dim() const override { return mean_.size(); }
  double log_rho(CSpan x) const override;
  void score(CSpan x, MSpan out) const override;
  using TargetDensity::score;
  bool has_sampler() const override { return true; }
  Matrix sample(std::size_t n, Rng& rng) const override;
  std::optional<double> log_normalizer() const override { return log_z_; }

  const Vec& mean() const { return mean_; }
  double scale() const { return scale_; }

 private:
  Vec mean_;
  double scale_;
  double log_z_;
};

/// Equal-weight mixture of isotropic Gaussians (normalized, Z = 1).
class GmmTarget : public TargetDensity {
 public:
  GmmTarget(Matrix means, double variance = 1.0);

  std::string name() const override { return "gmm"; }
  std::size_t dim() const override { return means_.cols; }
  std::size_t components() const { return means_.rows; }
  const Matrix& means() const { return means_; }
  double variance() const { return variance_; }

  double log_rho(CSpan x) const override;
  void score(CSpan x, MSpan out) const override;
  using TargetDensity::score;
  bool has_sampler() const override { return true; }
  Matrix sample(std::size_t n, Rng& rng) const override;
  std::optional<double> log_normalizer() const override { return 0.0; }

  /// argmax_k of the weighted component density; ties go to the lowest index.
  std::size_t mode_assignment(CSpan x) const;

 private:
  Matrix means_;
  double variance_;
};

/// K means drawn uniformly from [-box, box]^d with the given seed.
GmmTarget gmm_target(std::size_t K, std::size_t d, double box_halfwidth, std::uint64_t seed, double variance = 1.0);

struct Dw4Params {
  double a = 0.0;
  double b = -4.0;
  double c = 0.9;
  double tau = 1.0;
  double d0 = 1.0;
};

/// Four particles in the plane with pairwise double-well energy; log rho = -E.
class Dw4Target : public TargetDensity {
 public:
  explicit Dw4Target(Dw4Params p = {}) : p_(p) {}
  std::string name() const override { return "dw4"; }
  std::size_t dim() const override { return 8; }
  double log_rho(CSpan x) const override { return -energy(x); }
  double energy(CSpan x) const override;
  void score(CSpan x, MSpan out) const override;
  using TargetDensity::score;
  const Dw4Params& params() const { return p_; }

 private:
  Dw4Params p_;
};

double dw4_energy(CSpan x, const Dw4Params& p = {});

struct LjParams {
  std::size_t particles = 13;
  double epsilon = 1.0;
  double r_m = 1.0;
  double tau = 1.0;
  double c_osc = 1.0;
  double energy_clamp = 1e6;
  double score_clip = 1e4;
};

struct LjEnergy {
  double value;   // clamped at energy_clamp
  bool singular;  // a pair was coincident or the clamp was hit
};

/// Lennard-Jones cluster in 3-D plus a harmonic pull towards the center of mass.
class LjTarget : public TargetDensity {
 public:
  explicit LjTarget(LjParams p = {});
  std::string name() const override { return "lj"; }
  std::size_t dim() const override { return 3 * p_.particles; }
  double log_rho(CSpan x) const override { return -energy(x); }
  double energy(CSpan x) const override { return energy_checked(x).value; }
  LjEnergy energy_checked(CSpan x) const;
  /// -grad E with the norm clipped at score_clip.
  void score(CSpan x, MSpan out) const override;
  using TargetDensity::score;
  /// Unclipped -grad E; tests use this against finite differences.
  void raw_score(CSpan x, MSpan out) const;
  const LjParams& params() const { return p_; }

 private:
  LjParams p_;
};

LjEnergy lj_energy(CSpan x, const LjParams& p);

/// Initial distribution of the controlled process.
class PriorDistribution {
 public:
  static PriorDistribution gaussian(Vec mean, double scale);
  static PriorDistribution dirac(Vec point);

  bool is_dirac() const { return dirac_; }
  std::size_t dim() const { return mean_.size(); }
  const Vec& mean() const { return mean_; }
  /// Per-coordinate standard deviation (0 for Dirac).
  double scale() const { return scale_; }

  void sample(Rng& rng, MSpan out) const;
  Matrix sample(std::size_t n, Rng& rng) const;
  /// Throws UnsupportedCouplingError for a Dirac prior.
  double log_density(CSpan x) const;
  void score(CSpan x, MSpan out) const;
  Vec score(CSpan x) const;

 private:
  PriorDistribution() = default;
  Vec mean_;
  double scale_ = 0.0;
  bool dirac_ = false;
};

}  // namespace bms
