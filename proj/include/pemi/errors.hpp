#ifndef PEMI_ERRORS_HPP
#define PEMI_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pemi {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kSuccess = 0,
  kInternal = 1,
  kConfig = 2,
  kData = 3,
  kCheckpoint = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const noexcept { return ExitCode::kInternal; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kConfig; }
};

class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kData; }
};

class CheckpointError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kCheckpoint; }
};

// Shape disagreement between operands of a tensor primitive.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Misuse of the gradient tape (foreign handle, non-scalar loss).
class TapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a primitive, or a loss that is not finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A normalization row with nothing to normalize over.
class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

class LayoutError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class TemplateError : public DataError {
 public:
  using DataError::DataError;
};

class LengthError : public DataError {
 public:
  using DataError::DataError;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

class LevelError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Dataset labels that do not fit a checkpoint's hierarchy.
class CompatibilityError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace pemi

#endif  // PEMI_ERRORS_HPP
