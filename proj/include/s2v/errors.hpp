#pragma once

#include <stdexcept>
#include <string>

namespace s2v {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Bad configuration, geometry mismatch, or an invalid split request.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, ExitCode::kConfig) {}
};

// Tensor extents that do not fit together.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(what, ExitCode::kConfig) {}
};

// Missing files, malformed files, empty datasets, alignment failures.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, ExitCode::kData) {}
};

// NaN/Inf encountered in a forward or backward pass.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, ExitCode::kNumeric) {}
};

// API misuse, e.g. backward on a non-scalar without a seed.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what, ExitCode::kConfig) {}
};

}  // namespace s2v
