#pragma once

#include <stdexcept>
#include <string>

namespace esnet {

// Broad failure class; the CLI maps it onto a process exit code.
enum class ErrorKind { Usage = 1, Data = 2, Numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), kind_(kind), code_(std::move(code)), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Short machine-readable name, e.g. "MissingAttribute".
  const std::string& code() const noexcept { return code_; }
  // Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string code_;
  std::string detail_;
};

class DataError : public Error {
 public:
  DataError(std::string code, const std::string& what)
      : Error(ErrorKind::Data, std::move(code), what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, "UsageError", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorKind::Numeric, "NumericFailure", what) {}
};

}  // namespace esnet
