#pragma once

#include <stdexcept>
#include <string>

namespace mmg {

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, numeric 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension contract violations. A user can hit these through bad
// inputs, so they count as data errors for exit-code purposes.
struct DimError : DataError {
  explicit DimError(const std::string& msg) : DataError(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mmg
