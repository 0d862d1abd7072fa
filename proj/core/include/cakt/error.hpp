#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cakt {

/// Input violates a documented contract (bad value, bad shape, bad range).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A data file could not be parsed. `line()` is 1-based; 0 when the error is
/// not tied to a particular line.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Failure while running an experiment (non-finite loss, I/O failure, ...).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cakt
