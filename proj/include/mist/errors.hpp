#pragma once

#include <stdexcept>
#include <string>

namespace mist {

// Error taxonomy mirrored by the CLI exit codes:
//   UsageError -> 1, DataError -> 2, NumericError / ShapeError / ContractError -> 3.

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : NumericError {
  explicit ShapeError(const std::string& msg) : NumericError(msg) {}
};

// Violated precondition (degenerate batch, non-scalar backward seed, ...).
struct ContractError : NumericError {
  explicit ContractError(const std::string& msg) : NumericError(msg) {}
};

}  // namespace mist
