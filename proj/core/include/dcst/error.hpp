#pragma once

#include <stdexcept>
#include <string>

namespace dcst {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or argument contract violated by a caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a diverging computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed files, bad annotations, unreadable images.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dcst
