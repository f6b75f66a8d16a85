#pragma once

#include <stdexcept>
#include <string>

namespace fslab {

// Error taxonomy shared across the library. The CLI maps these onto its
// exit-code contract: ConfigError -> 1, DataError/ShapeError -> 2,
// NumericError -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// l2_normalize / prototype fusion applied to a (near-)zero vector.
struct DegenerateVectorError : NumericError {
  using NumericError::NumericError;
};

// A contrastive batch in which no anchor has a positive.
struct DegenerateBatchError : NumericError {
  using NumericError::NumericError;
};

// backward() misuse (non-scalar loss, detached loss, repeated call).
struct AutodiffError : Error {
  using Error::Error;
};

struct DoubleBackwardError : AutodiffError {
  using AutodiffError::AutodiffError;
};

}  // namespace fslab
