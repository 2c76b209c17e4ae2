#pragma once

#include <stdexcept>
#include <string>

namespace nres {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data: bad files, extent mismatches, invalid parameters.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape disagreement between operation arguments.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A numerical procedure failed: non-convergence, non-finite values.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward through a consumed graph.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace nres
