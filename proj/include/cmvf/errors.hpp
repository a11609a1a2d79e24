#pragma once

#include <stdexcept>
#include <string>

namespace cmvf {

// Base for all library errors. The CLI maps these onto exit codes:
// ValidationError/ConfigError/IoError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Bad argument values, malformed input data, protocol violations.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// File-level problems: missing files, truncated or mis-versioned containers.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Bad configuration keys or values.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Non-finite losses or gradients, divergence, failed numeric checks.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace cmvf
