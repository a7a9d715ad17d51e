#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ncep {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed rule text. Carries a 1-based source position.
class SyntaxError : public Error {
 public:
  SyntaxError(const std::string& message, std::size_t line, std::size_t column)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
              message),
        line_(line),
        column_(column) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Built-in evaluation failure during proof search (e.g. unbound arithmetic).
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// A configured resource bound (resolution steps, enumeration size) was exceeded.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// A circuit leaf has no value in the supplied belief table.
class BindingError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class BalanceError : public Error {
 public:
  using Error::Error;
};

/// Dataset/checkpoint files that are unreadable or mutually incompatible.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ncep
