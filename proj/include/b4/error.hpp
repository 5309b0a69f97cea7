#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace b4 {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range configuration value; the message names the field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a domain invariant (OHLC ordering, unknown topic, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

/// Malformed input text. Carries the 1-based line number of the offending row.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// NaN or Inf produced by a tensor operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Autodiff misuse: non-scalar loss, detached graph, foreign tape.
class GraphError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Broken internal invariant (bad token id, missing special position).
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace b4
