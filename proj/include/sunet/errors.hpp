#pragma once

#include <stdexcept>
#include <string>

namespace sunet {

/// Base for all pipeline errors. Commands map these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line (or record) number when known.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration or usage (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An artifact (checkpoint, grid) does not match the pipeline that loads it (exit code 3).
class ArtifactMismatch : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A tensor produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace sunet
