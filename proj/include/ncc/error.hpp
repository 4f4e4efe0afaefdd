#pragma once

#include <stdexcept>
#include <string>

namespace ncc {

/// Failure categories. Each maps to a distinct process exit code in the CLI.
enum class ErrorKind {
  InvalidInput,
  InvalidParameter,
  InsufficientData,
  Shape,
  State,
  PipelineOrder,
  Schema,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::InvalidParameter: return "invalid-parameter";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::State: return "state";
    case ErrorKind::PipelineOrder: return "pipeline-order";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Exit code used by the CLI for an error category (0 is success, 1 a failed check, 2 usage).
inline int exit_code(ErrorKind kind) { return 3 + static_cast<int>(kind); }

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace ncc
