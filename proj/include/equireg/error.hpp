#pragma once

#include <stdexcept>
#include <string>

namespace equireg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes at an op or operator boundary.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by an op, or a diverging optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or out-of-range parameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace equireg
