#ifndef VESSELSEG_ERRORS_HPP_
#define VESSELSEG_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace vesselseg {

// Base of every error thrown by the library. The CLI maps subclasses to
// distinct process exit codes (see exit_code_for).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or inconsistent configuration / contract violations by the caller.
class InvalidConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public InvalidConfigError {
 public:
  using InvalidConfigError::InvalidConfigError;
};

class DomainError : public InvalidConfigError {
 public:
  using InvalidConfigError::InvalidConfigError;
};

class OverflowError : public InvalidConfigError {
 public:
  using InvalidConfigError::InvalidConfigError;
};

class AssignmentMismatchError : public InvalidConfigError {
 public:
  using InvalidConfigError::InvalidConfigError;
};

class PadRecordMismatchError : public InvalidConfigError {
 public:
  using InvalidConfigError::InvalidConfigError;
};

class NotTrainedError : public InvalidConfigError {
 public:
  using InvalidConfigError::InvalidConfigError;
};

// Data / filesystem problems.
class DataError : public Error {
 public:
  using Error::Error;
};

class SidecarMissingError : public DataError {
 public:
  using DataError::DataError;
};

class SidecarCorruptError : public DataError {
 public:
  using DataError::DataError;
};

class BlobSizeMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class UnsupportedDtypeError : public DataError {
 public:
  using DataError::DataError;
};

class NoForegroundError : public DataError {
 public:
  using DataError::DataError;
};

class GenerationError : public DataError {
 public:
  using DataError::DataError;
};

class IdMismatchError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite loss during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Exit codes used by the CLI: 0 success, 2 configuration, 3 data, 4 divergence.
inline int exit_code_for(const Error& e) {
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  return 2;
}

}  // namespace vesselseg

#endif  // VESSELSEG_ERRORS_HPP_
