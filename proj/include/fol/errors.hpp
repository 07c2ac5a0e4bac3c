#pragma once

#include <stdexcept>
#include <string>

namespace fol {

// Error taxonomy mirrors the CLI exit codes: configuration problems exit 2,
// data problems exit 3, numerical failures exit 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fol
