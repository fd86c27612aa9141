#pragma once

#include <stdexcept>
#include <string>

namespace mse {

// Base of every error the library raises. Subclasses map onto the CLI exit
// codes: invariant breaches are bugs, everything else is input or numerics.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Raised when a frozen backbone changes underneath a training run.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace mse
