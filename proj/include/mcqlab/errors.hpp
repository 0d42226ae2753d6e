#pragma once

#include <stdexcept>
#include <string>

namespace mcqlab {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or precondition violation on user-supplied input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A header pool has fewer statements than an item needs.
class PoolExhaustedError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; carries the 1-based line and the offending column.
class ParseError : public Error {
 public:
  ParseError(std::string path, std::size_t line, std::string column, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": column '" + column + "': " + what),
        path_(std::move(path)),
        line_(line),
        column_(std::move(column)) {}

  const std::string& path() const noexcept { return path_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::string path_;
  std::size_t line_;
  std::string column_;
};

// Numerical failure inside the likelihood or optimizer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mcqlab
