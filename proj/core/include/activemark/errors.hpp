#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace activemark {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a NaN or Inf shows up in a tensor or a gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(std::size_t step, const std::string& what)
      : NumericError("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// The suspect cannot host the key's extraction protocol (wrong widths or split).
class IncompatibleSuspect : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IntegrityError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace activemark
