#pragma once

#include <stdexcept>
#include <string>

namespace tsc {

// Error categories used across the library. Everything derives from a
// standard exception so callers can catch broadly when they don't care.

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad command line or configuration; the CLI maps it to exit code 2.
class UsageError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class NotFound : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A precondition on call order or state was violated by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed document or record. `line` is 1-based, 0 when not line oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tsc
