#pragma once

/*
 * Error categories for the tso-lab library.
 *
 * Every failure surfaces as an exception derived from tso::Error. The
 * category decides the process exit code when the CLI reports it.
 */

#include <stdexcept>
#include <string>

namespace tso {

enum class ErrorCategory { Input, Capacity, Parse, Config, Numerical, Io, EmptyDataset };

/// Process exit code for a category: 2 configuration, 3 bad input,
/// 4 numerical, 5 I/O, 6 empty dataset.
constexpr int exit_code_for(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Input:
    case ErrorCategory::Capacity:
    case ErrorCategory::Parse: return 3;
    case ErrorCategory::Numerical: return 4;
    case ErrorCategory::Io: return 5;
    case ErrorCategory::EmptyDataset: return 6;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return exit_code_for(category_); }

 private:
  ErrorCategory category_;
};

struct InputError : Error {
  explicit InputError(const std::string& w) : Error(ErrorCategory::Input, "input error: " + w) {}
};

struct CapacityError : Error {
  explicit CapacityError(const std::string& w) : Error(ErrorCategory::Capacity, "capacity error: " + w) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorCategory::Parse, "parse error: " + w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::Config, "configuration error: " + w) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorCategory::Numerical, "numerical error: " + w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::Io, "I/O error: " + w) {}
};

struct EmptyDatasetError : Error {
  explicit EmptyDatasetError(const std::string& w) : Error(ErrorCategory::EmptyDataset, "empty dataset: " + w) {}
};

}  // namespace tso
