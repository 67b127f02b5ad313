#pragma once

#include <stdexcept>
#include <string>

namespace cdis {

// Every error raised by the library derives from Error so callers can catch
// one type at a boundary (the CLI maps the subclasses onto exit codes).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or an out-of-range axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (log of a
// non-positive value, division by zero, probabilities outside [0,1]).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller violated a precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Object used in the wrong lifecycle state (e.g. a consumed tape).
class StateError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter value (non-positive temperature, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, or a numeric verification failed.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed external file (dataset or checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Bad configuration file or command-line override.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdis
