#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace bms {

/// Seeded random source. The engine is std::mt19937_64; the uniform and normal
/// transforms are written out here so that streams are identical across
/// standard-library implementations and the full state is just the engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream for (seed, stream) pairs, e.g. one per worker or chunk.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform on (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  void fill_normal(std::span<double> out);

  std::mt19937_64& engine() { return engine_; }

  std::string save_state() const;
  void load_state(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace bms
