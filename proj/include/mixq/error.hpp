#pragma once

#include <stdexcept>
#include <string>

namespace mixq {

// Process exit codes used by the command-line front end.
enum class ExitCode : int {
  Success = 0,
  Usage = 1,
  DataError = 2,
  VerificationFailure = 3,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::DataError)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Bad flag, bad config value.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what, ExitCode::Usage) {}
};

// Unreadable or malformed files, shape mismatches between artifacts.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, ExitCode::DataError) {}
};

// A violated precondition of a library call (length mismatch, stale cache, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(what, ExitCode::DataError) {}
};

// Input outside the mathematical domain of an operation (non-finite value, zero scale).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(what, ExitCode::DataError) {}
};

// NaN/Inf produced during training or inference.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, ExitCode::DataError) {}
};

class VerificationError : public Error {
 public:
  explicit VerificationError(const std::string& what)
      : Error(what, ExitCode::VerificationFailure) {}
};

}  // namespace mixq
