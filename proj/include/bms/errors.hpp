#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bms {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (e.g. t outside [0,T]).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Query at a time where the requested density or score is singular.
class SingularTimeError : public DomainError {
 public:
  SingularTimeError(const std::string& what, double t) : DomainError(what), time_(t) {}
  double time() const { return time_; }

 private:
  double time_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::string field = {}, int line = -1)
      : Error(line >= 0 ? what + " (field '" + field + "', line " + std::to_string(line) + ")"
                        : (field.empty() ? what : what + " (field '" + field + "')")),
        field_(std::move(field)),
        line_(line) {}
  const std::string& field() const { return field_; }
  int line() const { return line_; }

 private:
  std::string field_;
  int line_;
};

/// The requested coupling or estimator needs a density the prior does not have.
class UnsupportedCouplingError : public Error {
 public:
  using Error::Error;
};

/// Simulation produced a non-finite state.
class SimulationDivergenceError : public Error {
 public:
  SimulationDivergenceError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Training produced a non-finite loss.
class TrainingDivergenceError : public Error {
 public:
  TrainingDivergenceError(const std::string& what, double last_finite_loss)
      : Error(what), last_finite_loss_(last_finite_loss) {}
  double last_finite_loss() const { return last_finite_loss_; }

 private:
  double last_finite_loss_;
};

/// Too many regression targets were non-finite within one batch.
class DataQualityError : public Error {
 public:
  using Error::Error;
};

/// Parameters contain NaN; the field can no longer be evaluated.
class PoisonedStateError : public Error {
 public:
  using Error::Error;
};

/// Estimator is undefined for the given data (zero denominator, all weights -inf, ...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace bms
