#pragma once

#include <stdexcept>
#include <string>

namespace aumask {

/// Bad input: malformed values, shape mismatches, broken preconditions.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite intermediates, failed estimation, degenerate fits.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Logistic fit whose coefficients diverge (outcome perfectly predicted).
class SeparationError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// File-level problems (missing files, unreadable rows).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace aumask
