#pragma once

#include <stdexcept>
#include <string>

namespace amrlab {

// Every failure the library raises derives from Error. The CLI maps the
// concrete type onto its exit code (see ExitCode below).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller supplied an argument outside the operation's domain.
class InputError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. differentiating a non-scalar root.
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File parsed but its contents violate a dataset invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced from finite inputs, or a metric that is undefined.
class NumericError : public Error {
 public:
  using Error::Error;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
};

ExitCode exit_code_for(const std::exception& e) noexcept;

}  // namespace amrlab
