#pragma once

#include <stdexcept>
#include <string>

namespace ega {

// Error categories map onto the CLI exit codes: configuration problems,
// bad or malformed data, and numeric failures.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class VariantMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public NumericError {
 public:
  using NumericError::NumericError;
};

class DegenerateNormError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace ega
