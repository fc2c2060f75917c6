#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace glsweep {

enum class ErrorKind {
  config,      // bad arguments, missing paths, inconsistent inputs
  format,      // malformed files
  numeric,     // indefinite / singular systems, solver breakdown
  io,          // read/write failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Dimension or shape mismatch between operands.
class StructuralError : public Error {
 public:
  explicit StructuralError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : Error(ErrorKind::format, what + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

/// Numerical failure tied to an index: a pivot, an eigenvalue position, a SNP.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t index)
      : Error(ErrorKind::numeric, what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class IndefiniteError : public NumericError {
 public:
  using NumericError::NumericError;
};

class SingularError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Process exit codes used by the command-line front end.
inline int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::format: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::io: return 5;
  }
  return 1;
}

}  // namespace glsweep
