#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sbgan {

enum class ErrorKind {
  Config,
  Argument,
  State,
  Numeric,
  Load,
  Io,
};

// Stable machine-readable prefix used on the command line, e.g. "E_CONFIG".
std::string_view error_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace sbgan
