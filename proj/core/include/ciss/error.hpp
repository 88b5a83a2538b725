#pragma once

#include <stdexcept>
#include <string>

namespace ciss {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform to an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value lies outside an operation's domain (log of a non-positive value,
// out-of-range label, unknown class id, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf appeared in a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of the gradient tape (double backward, non-scalar loss).
class TapeError : public Error {
 public:
  using Error::Error;
};

// Invalid scenario, dataset or configuration request.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem or serialization failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ciss
