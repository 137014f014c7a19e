#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdft {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration: unknown keys, invalid shapes, out-of-range hyperparameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad call arguments: token ids out of range, empty prompts, mismatched lengths.
class InputError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// An exact oracle was requested beyond the enumeration budget.
class BudgetError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdft
