#pragma once

#include <stdexcept>
#include <string>

namespace seg25d {

// Every failure raised by the library derives from Error. The CLI maps the
// subclasses onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or volume shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid settings: unsupported kernels, bad k, out-of-range hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed binary files or text documents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Missing or inconsistent data: empty samples, missing files, absent inputs.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN produced during a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace seg25d
