#pragma once

#include <stdexcept>
#include <string>

namespace parakit {

// Error taxonomy shared by the library and the CLI. Each kind maps to a
// distinct process exit code so scripted callers can branch on failures.
enum class ErrorKind {
  config,      // bad option values, incompatible configuration
  io,          // missing files, unreadable/unwritable paths
  format,      // parse failures in on-disk formats
  contract,    // precondition violations: shapes, indices, call order
  numeric,     // NaN/Inf surfaced where finite values are required
  degenerate,  // undefined statistics, impossible splits
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::contract: return "contract";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::degenerate: return "degenerate";
  }
  return "unknown";
}

inline int error_exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::io: return 3;
    case ErrorKind::format: return 4;
    case ErrorKind::contract: return 5;
    case ErrorKind::numeric: return 6;
    case ErrorKind::degenerate: return 7;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_config(const std::string& m) { throw Error(ErrorKind::config, m); }
[[noreturn]] inline void fail_io(const std::string& m) { throw Error(ErrorKind::io, m); }
[[noreturn]] inline void fail_format(const std::string& m) { throw Error(ErrorKind::format, m); }
[[noreturn]] inline void fail_contract(const std::string& m) { throw Error(ErrorKind::contract, m); }
[[noreturn]] inline void fail_numeric(const std::string& m) { throw Error(ErrorKind::numeric, m); }
[[noreturn]] inline void fail_degenerate(const std::string& m) { throw Error(ErrorKind::degenerate, m); }

}  // namespace parakit
