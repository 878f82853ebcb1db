#pragma once

#include <stdexcept>
#include <string>

namespace cafe {

enum class ErrorKind {
  InvalidArgument,  // precondition or shape violation
  Format,           // malformed file content
  Io,               // file system failure
  Mismatch,         // artifact does not match montage / backbone / version
  Numeric,          // NaN or Inf encountered
  Config,           // bad configuration value or unknown key
};

/// Library-wide exception. `kind` lets callers (the CLI) map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, const std::string& msg, ErrorKind kind = ErrorKind::InvalidArgument) {
  if (!cond) throw Error(kind, msg);
}

}  // namespace cafe
