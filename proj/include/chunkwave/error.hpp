#pragma once

#include <stdexcept>
#include <string>

namespace chunkwave {

// Base of every error thrown by the library. The CLI maps FormatError and
// InputError to exit status 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unsupported file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied data violates an operation's precondition
// (length mismatch, too-short audio, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (even kernel, non-positive hop, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Value outside the mathematical domain of an operation (log of <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A pluggable component broke its contract (wrong output length).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Optimization produced a non-finite loss.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace chunkwave
