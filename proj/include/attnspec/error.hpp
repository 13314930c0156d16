#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attnspec {

enum class ErrorKind {
  missing_file,
  malformed_json,
  version_mismatch,
  size_mismatch,
  schema,
  non_finite,
  shape_mismatch,
  precondition,
  io,
  numerical,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::missing_file: return "missing_file";
    case ErrorKind::malformed_json: return "malformed_json";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::size_mismatch: return "size_mismatch";
    case ErrorKind::schema: return "schema";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::io: return "io";
    case ErrorKind::numerical: return "numerical";
  }
  return "unknown";
}

/// Every failure raised by the library carries a category so callers (the CLI
/// in particular) can map it onto an exit code without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Input-side failures: the data handed to us is wrong, not the code.
  bool is_input_error() const noexcept {
    switch (kind_) {
      case ErrorKind::missing_file:
      case ErrorKind::malformed_json:
      case ErrorKind::version_mismatch:
      case ErrorKind::size_mismatch:
      case ErrorKind::schema:
      case ErrorKind::non_finite:
      case ErrorKind::io:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace attnspec
