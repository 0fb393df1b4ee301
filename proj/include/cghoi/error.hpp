#pragma once

#include <stdexcept>
#include <string>

namespace cghoi {

// Base of every error raised by the library. The category drives the
// command-line exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inputs violate a documented precondition (shapes, ranges, finiteness).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Degenerate 6D rotation (zero or parallel columns).
class DegenerateRotation : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Tensor operands whose shapes do not fit the operation.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Malformed file contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersion : public ParseError {
 public:
  using ParseError::ParseError;
};

// Failure while running an otherwise valid computation (non-finite loss,
// diverging sampler, I/O failure).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace cghoi
