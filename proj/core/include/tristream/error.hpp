#pragma once

#include <stdexcept>
#include <string>

namespace tristream {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration (model, layer, preprocessing, training) is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset content or dataset files are unusable.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A binary file (checkpoint or dataset) is malformed.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// A NaN or infinity appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace tristream
