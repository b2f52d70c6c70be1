#pragma once

#include <stdexcept>
#include <string>

namespace d3re {

// Invalid configuration or arguments. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure at runtime (non-finite loss, integrator underflow, ...).
// The CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace d3re
