#pragma once

// Experiment configuration file (YAML). Plain data so that it round-trips;
// build_train_config turns it into the trainer's runtime objects.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bms/targets.hpp"
#include "bms/trainer.hpp"

namespace bms::cli {

struct TargetSpec {
  std::string kind = "gmm";  // gaussian | gmm | dw4 | lj
  std::size_t dim = 2;       // gaussian, gmm
  // gmm
  std::size_t components = 4;
  double box = 4.0;
  double variance = 1.0;
  std::uint64_t means_seed = 0;
  // gaussian
  std::vector<double> mean;  // empty: zeros
  double scale = 1.0;
  double log_z = 0.0;
  // lj
  std::size_t particles = 13;

  bool operator==(const TargetSpec&) const = default;
};

struct PriorSpec {
  std::string kind = "gaussian";  // gaussian | dirac
  std::vector<double> mean;       // empty: zeros
  double scale = 1.0;
  bool operator==(const PriorSpec&) const = default;
};

struct ScheduleSpec {
  std::string kind = "constant";  // constant | geometric | edm_ve
  double sigma = 2.5;
  double sigma_min = 0.05;
  double sigma_max = 2.0;
  double rho = 7.0;
  double horizon = 1.0;
  bool operator==(const ScheduleSpec&) const = default;
};

struct CouplingSpec {
  std::string kind = "bms";           // bms | as | sb | general
  std::string corrector = "memoryless";  // sb: memoryless | gaussian
  std::string joint = "gaussian_sb";     // general: gaussian_sb
  bool operator==(const CouplingSpec&) const = default;
};

struct CvSpec {
  std::string kind = "gamma";  // gamma | constant | learned
  double value = 0.5;          // constant
  std::size_t width = 64;
  std::size_t n_freq = 16;
  bool operator==(const CvSpec&) const = default;
};

struct NetworkSpec {
  std::size_t width = 512;
  std::size_t hidden_layers = 6;
  std::size_t n_freq = 64;
  std::string activation = "gelu";
  bool operator==(const NetworkSpec&) const = default;
};

struct TrainSpec {
  std::size_t outer_steps = 1000;
  std::size_t inner_steps = 1000;
  std::size_t buffer_size = 30000;
  std::size_t batch_size = 1024;
  std::size_t em_steps = 100;
  double eta = 0.0;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  double clip = 1.0;
  double t_cut = 1e-3;
  bool reparameterize = true;
  bool stratified_time = false;
  double buffer_reuse = 0.0;
  bool likelihood_heads = false;
  std::size_t head_steps = 0;
  bool operator==(const TrainSpec&) const = default;
};

struct EvaluateSpec {
  std::vector<std::string> metrics{"mode_tvd", "sliced_tvd", "w2"};
  std::size_t n_samples = 2000;
  std::string reference;  // sample file; empty: draw from the target's exact sampler
  bool operator==(const EvaluateSpec&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  std::size_t checkpoint_every = 0;
  TargetSpec target;
  PriorSpec prior;
  ScheduleSpec schedule;
  CouplingSpec coupling;
  CvSpec cv;
  NetworkSpec network;
  TrainSpec train;
  EvaluateSpec evaluate;
  bool operator==(const ExperimentConfig&) const = default;

  /// Divides outer steps, inner steps and buffer size by 10 (at least 1).
  void apply_desk_scale();
};

/// Throws ConfigError naming the field and the line for unknown keys, wrong
/// types and invalid values.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string to_yaml(const ExperimentConfig& c);

std::shared_ptr<const TargetDensity> make_target(const TargetSpec& t);
NoiseSchedule make_schedule(const ScheduleSpec& s);
PriorDistribution make_prior(const PriorSpec& p, std::size_t dim);

/// Runtime training configuration. Couplings that need a corrector or joint
/// scores are built from closed forms, which requires a Gaussian target.
TrainConfig build_train_config(const ExperimentConfig& c);

}  // namespace bms::cli
