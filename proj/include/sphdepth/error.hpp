#pragma once

#include <stdexcept>
#include <string>

namespace sphdepth {

enum class ErrorKind {
  InvalidInput,
  SingularPoint,
  AspectRatio,
  DegenerateCoverage,
  Usage,
  Io,
  Divergence,
};

/// Base exception for every failure raised by the library. The kind maps
/// directly onto the CLI exit codes (see `exit_code`).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::SingularPoint: return "singular point";
    case ErrorKind::AspectRatio: return "aspect ratio";
    case ErrorKind::DegenerateCoverage: return "degenerate coverage";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Io: return "i/o";
    case ErrorKind::Divergence: return "divergence";
  }
  return "unknown";
}

// 0 success, 2 validation, 3 I/O, 4 numerical failure.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io: return 3;
    case ErrorKind::Divergence:
    case ErrorKind::DegenerateCoverage: return 4;
    default: return 2;
  }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace sphdepth
