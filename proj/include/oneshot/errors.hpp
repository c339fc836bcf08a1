#pragma once

#include <stdexcept>
#include <string>

namespace oneshot {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or image shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of a gradient tape (e.g. backward on a tensor the tape never produced).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Index or label out of its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Dataset content that cannot satisfy a request.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked on an object in the wrong lifecycle state.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace oneshot
