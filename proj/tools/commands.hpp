#pragma once

// Subcommands of the bms executable. Each returns the process exit status and
// writes its artifacts to disk; diagnostics go to the given stream.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "bms/oracle.hpp"
#include "bms/types.hpp"
#include "config.hpp"

namespace bms::cli {

struct TrainOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;  // parent of the run directory; empty: config output_dir
  bool desk_scale = false;
};

struct SampleOptions {
  std::string checkpoint;  // checkpoint file or run directory
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  std::string out;  // sample file
};

struct EvaluateOptions {
  std::string input;        // sample file, checkpoint file or run directory
  std::string config_path;  // target and metric list; empty: the run's config.yaml
  std::string reference;    // overrides evaluate.reference
  std::optional<std::size_t> n_samples;
  std::uint64_t seed = 0;
  std::string out;  // report directory
};

struct OracleCheckOptions {
  std::uint64_t seed = 20240601;
  double kappa_fault = 0.0;
};

int cmd_train(const TrainOptions& o, std::ostream& log);
int cmd_sample(const SampleOptions& o, std::ostream& log);
int cmd_evaluate(const EvaluateOptions& o, std::ostream& log);
int cmd_oracle_check(const OracleCheckOptions& o, std::ostream& out);

// ------------------------------------------------------------ sample files

constexpr std::size_t kCsvMaxRows = 10000;

/// CSV with a one-line header up to kCsvMaxRows rows, otherwise raw
/// little-endian float64 at path with a JSON sidecar at path + ".json".
void write_samples(const std::string& path, const Matrix& x, std::uint64_t seed);
Matrix read_samples(const std::string& path);

/// Simulates n terminal samples from a checkpoint: a training state, a saved
/// field, or a Gaussian oracle description.
Matrix sample_checkpoint(const std::string& path, std::size_t n, std::uint64_t seed);

/// Checkpoint whose sampler is the closed-form optimal drift of the pair.
void write_gaussian_oracle_checkpoint(const std::string& path, const oracle::GaussianPair& p, std::size_t em_steps);

}  // namespace bms::cli
