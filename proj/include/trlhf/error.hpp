#pragma once

#include <stdexcept>
#include <string>

namespace trlhf {

// Base of every error raised by the library. The CLI maps each subclass to a
// distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration: invalid flags, empty maps, inconsistent settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// A record that failed to parse. Carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(const std::string& source, int line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Non-finite kinematic state handed to the dynamics.
class InvalidStateError : public Error {
 public:
  using Error::Error;
};

// Procedural scene generation could not satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// A network produced a non-finite value.
class ModelError : public Error {
 public:
  using Error::Error;
};

// Optimization diverged (non-finite gradient or loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace trlhf
