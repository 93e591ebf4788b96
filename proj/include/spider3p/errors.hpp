#pragma once

#include <stdexcept>
#include <string>

namespace spider3p {

// Invalid configuration, schema violation, or precondition failure on user input.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A numerical procedure failed (root finder did not converge, quadrature
// underflow, sampler cap exceeded, non-finite iterate, ...). The message
// carries the offending coordinates / final state.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace spider3p
