#pragma once

#include <stdexcept>
#include <string>

namespace pvae {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand dimensions disagree.
struct ShapeError : Error {
  using Error::Error;
};

/// Argument outside the function's domain (non-positive rate, empty sample...).
struct DomainError : Error {
  using Error::Error;
};

/// Invalid combination of options (e.g. straight-through on a Gaussian model).
struct ConfigError : Error {
  using Error::Error;
};

/// Malformed, truncated or corrupted input file.
struct DataError : Error {
  using Error::Error;
};

/// Object is not in the state the operation needs (missing cache...).
struct StateError : Error {
  using Error::Error;
};

/// Non-finite loss or divergent iteration.
struct NumericalError : Error {
  using Error::Error;
};

/// Iterative solver objective kept increasing: step size too large.
struct StepSizeError : NumericalError {
  using NumericalError::NumericalError;
};

}  // namespace pvae
