#pragma once

#include <stdexcept>
#include <string>

namespace lgn {

/// Errors that reach the command line. Each maps to a process exit code.
class Error : public std::runtime_error {
public:
  Error(const std::string& what, int exit_code) : std::runtime_error(what), exit_code_(exit_code) {}
  [[nodiscard]] int exit_code() const { return exit_code_; }

private:
  int exit_code_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error(what, 1) {}
};

/// Missing, malformed or inconsistent files.
class DataError : public Error {
public:
  explicit DataError(const std::string& what) : Error(what, 2) {}
};

/// Non-finite loss or logits during training.
class NumericError : public Error {
public:
  explicit NumericError(const std::string& what) : Error(what, 3) {}
};

}  // namespace lgn
