#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ebnn {

using Rng = std::mt19937_64;

/// Raised when a computation produces or receives NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sub-seed for a named component: splitmix64 over (master ^ fnv1a64(name)).
/// Distinct names give independent streams; the mapping is stable across
/// builds and platforms.
std::uint64_t derive_seed(std::uint64_t master, std::string_view component);

std::uint64_t fnv1a64(std::string_view text);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double value);

constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle into (-pi, pi].
double normalize_angle(double angle);

}  // namespace ebnn
