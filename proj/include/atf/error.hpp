#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace atf {

/// Base error for everything thrown by the library. `module()` names the
/// component that raised it so front ends can report a stable tag.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

/// A caller-side contract violation (bad argument, empty input, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Input data that failed validation. `line` is 1-based, 0 when unknown.
class DataError : public Error {
 public:
  DataError(std::string module, const std::string& what, std::size_t line = 0)
      : Error(std::move(module), line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Network or service failure that may succeed on retry.
class TransientError : public Error {
 public:
  using Error::Error;
};

/// Service failure that retrying cannot fix (auth, bad configuration).
class FatalEndpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace atf
