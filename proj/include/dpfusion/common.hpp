#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpfusion {

// ----- error taxonomy ------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values (non-finite input, negative budget, shape mismatch).
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// A charge would push the privacy ledger past its global budget.
class BudgetOverrunError : public Error {
 public:
  using Error::Error;
};

// Quadrature non-convergence and similar numeric failures.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent external data (CSV rows, trajectory files).
class DataError : public Error {
 public:
  using Error::Error;
};

// Discrete instance cannot satisfy its own budget constraint.
class InfeasibleInstanceError : public Error {
 public:
  using Error::Error;
};

// Conditioning on an observation of probability zero.
class ImpossibleObservationError : public Error {
 public:
  using Error::Error;
};

// API misuse (backward on an untracked graph, etc.).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Config validation failure; carries the offending field path.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& msg)
      : Error("config field '" + field + "': " + msg), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// ----- rng -----------------------------------------------------------------

// splitmix64; used to derive independent substream seeds from one root seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// mt19937_64 wrapper with a stateless Box-Muller normal so that draw order
// is exactly one engine step per call (std::normal_distribution caches).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() {
    // 53-bit mantissa uniform in [0,1)
    return (engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::uint64_t next_u64() { return engine_(); }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    return n == 0 ? 0 : engine_() % n;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// ----- misc ----------------------------------------------------------------

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// FNV-1a, used for content hashes of emitted artifacts.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

// Shortest round-trip decimal formatting; keeps emitted files reproducible.
std::string format_double(double v);

}  // namespace dpfusion
