#pragma once

#include <stdexcept>
#include <string>

namespace mpec {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration, violated data invariant, or out-of-range argument.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes that do not chain.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Filesystem failures and malformed files.
class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mpec
