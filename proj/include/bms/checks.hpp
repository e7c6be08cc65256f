#pragma once

// Registry of oracle identity checks. Each check compares a library computation
// against a closed form or an independent brute-force answer and reports the
// measured statistic next to its pinned tolerance.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bms::checks {

struct Options {
  std::uint64_t seed = 20240601;
  double kappa_fault = 0.0;  // relative kappa perturbation applied to every schedule (self-test hook)
};

struct Result {
  std::string id;
  std::string name;
  double value = 0.0;      // measured statistic (error, |z|, ...)
  double tolerance = 0.0;  // pass iff value <= tolerance (and any extra condition in detail)
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct Check {
  std::string id;
  std::string name;
  std::string statistic;  // what value measures
  std::function<Result(const Options&)> run;
};

const std::vector<Check>& registry();

/// Runs one check, filling id, name and the wall time.
Result run(const Check& c, const Options& opt);

}  // namespace bms::checks
