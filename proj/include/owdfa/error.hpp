#pragma once

#include <stdexcept>
#include <string>

namespace owdfa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward value became NaN/Inf, or an input violates a numeric precondition.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff graph (non-scalar loss, detached loss, double backward).
class GraphError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint or dataset is valid but cannot be used in the requested context.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace owdfa
