#pragma once

#include <stdexcept>
#include <string>

namespace twoway {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed records, invalid tables, out-of-range arguments.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The row/column incidence graph of the observed cells is not connected, so
/// some cell means are not estimable.
class DisconnectedDesignError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A factorization failed or an objective became non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace twoway
