#pragma once

#include <stdexcept>
#include <string>

namespace tkgd {

// Base of every error thrown by the library. `kind()` is a stable short tag
// the CLI prints on the diagnostic stream.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "dimension"; }
};

// Division by zero, log of a non-positive value, NaN produced by an op.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numeric"; }
};

class DomainError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "domain"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "data"; }
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : DataError(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}
  const char* kind() const noexcept override { return "parse"; }
  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

class EmptyDatasetError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "empty-dataset"; }
};

class CorruptionError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "corrupt"; }
};

class IncompatibleVersionError : public DataError {
 public:
  using DataError::DataError;
  const char* kind() const noexcept override { return "version"; }
};

}  // namespace tkgd
