#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cellflow {

// Rejected input: shape mismatch, out-of-range argument, invalid record.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operation called on an object in the wrong state (e.g. untrained model).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed file content. Carries the 1-based line number when known.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Checkpoint written by an incompatible format version.
class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cellflow
