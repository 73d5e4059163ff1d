#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tseg {

// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid shapes, hyperparameters or model specs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad user data (out-of-range labels, mismatched dimensions of inputs).
class InputError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward on a non-scalar root.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Binary container failures. Each has its own type so callers can tell
// a corrupt header from a short file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class MagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncationError : public FormatError {
 public:
  TruncationError(const std::string& what, std::ptrdiff_t record)
      : FormatError(what), record_(record) {}
  // Index of the record being read when the file ended, -1 for the header.
  std::ptrdiff_t record() const noexcept { return record_; }

 private:
  std::ptrdiff_t record_;
};

class ShapeError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class AttackError : public Error {
 public:
  AttackError(const std::string& what, int iteration) : Error(what), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace tseg
