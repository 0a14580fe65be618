#pragma once

#include <stdexcept>
#include <string>

namespace cbmir {

// Error taxonomy shared by every module. The CLI maps each class onto a
// distinct process exit code (see tools/cbmir.cpp).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Layer/network configuration does not fit the data it is applied to.
struct ConfigError : Error {
  using Error::Error;
};

// Caller-supplied data is malformed or out of range.
struct InputError : Error {
  using Error::Error;
};

// Non-finite loss or gradient during training.
struct NumericalError : Error {
  using Error::Error;
};

// Filesystem failure.
struct IoError : Error {
  using Error::Error;
};

// Binary file could not be decoded.
struct FormatError : Error {
  using Error::Error;
};

struct BadMagicError : FormatError {
  using FormatError::FormatError;
};

struct VersionError : FormatError {
  using FormatError::FormatError;
};

struct TruncatedError : FormatError {
  using FormatError::FormatError;
};

// Index was built by a different network than the one supplied.
struct StaleIndexError : Error {
  using Error::Error;
};

// Broken internal contract (e.g. a pooling mask that does not match).
struct InternalError : Error {
  using Error::Error;
};

}  // namespace cbmir
