#pragma once

#include <stdexcept>
#include <string>

namespace metacd {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf showed up where a finite value is required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or precondition on user-facing knobs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace metacd
