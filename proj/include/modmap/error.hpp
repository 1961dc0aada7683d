#pragma once

#include <stdexcept>
#include <string>

namespace modmap {

/// Failure categories; each maps onto a distinct CLI exit code.
enum class ErrorKind { usage = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

class UsageError : public Error {
public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericError : public Error {
public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class DimensionMismatch : public DataError {
public:
  explicit DimensionMismatch(const std::string& what) : DataError("dimension mismatch: " + what) {}
};

/// Raised when a vector is too short for a cosine distance to be meaningful.
class DegenerateNorm : public NumericError {
public:
  explicit DegenerateNorm(const std::string& what) : NumericError("degenerate norm: " + what) {}
};

} // namespace modmap
