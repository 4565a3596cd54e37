#pragma once

#include <stdexcept>
#include <string>

namespace lidar_sim {

/// Base of every error raised by the library. The CLI maps the concrete
/// subclass onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (scene config, sensor spec, training config).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Angle, distance or index outside the covered range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent data (duplicate points, negative cells, empty inputs).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or wire payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Tensor or grid dimensions that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

}  // namespace lidar_sim
