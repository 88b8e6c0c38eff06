#pragma once

#include <stdexcept>
#include <string>

namespace cvla {

/// Tensor extents do not line up for the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition was violated (empty sequence, bad window size, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Stored parameters do not fit the configuration they are loaded against.
class ConfigMismatchError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file was readable but its contents are malformed (bad magic, truncation, trailing bytes).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace cvla
