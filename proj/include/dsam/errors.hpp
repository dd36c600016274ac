#pragma once

#include <stdexcept>
#include <string>

namespace dsam {

/// Operand shapes are incompatible (broadcast, matmul, dimension checks).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Math operation evaluated outside its domain (log of non-positive, div by zero).
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Training or simulation had to abort (too many non-finite paths, degenerate weights).
struct NumericAbort : std::runtime_error {
  explicit NumericAbort(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad user-facing configuration (unknown target, inconsistent dims, parse failure).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dsam
