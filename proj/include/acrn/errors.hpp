#pragma once

#include <stdexcept>
#include <string>

namespace acrn {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or malformed operation geometry.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, model specs or command-line input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing, unreadable or malformed dataset / weight files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff tape (non-scalar loss, consumed tape, ...).
class AutodiffError : public Error {
 public:
  using Error::Error;
};

}  // namespace acrn
