#pragma once

#include <stdexcept>
#include <string>

namespace lmcd {

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError -> 2, DataError -> 3, NumericError/StateError -> 4.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument to an operation (bad fold count, root has no siblings, ...).
class ArgumentError : public ConfigError {
 public:
  explicit ArgumentError(const std::string& msg) : ConfigError(msg) {}
};

// Malformed or inconsistent data: corpus files, fixtures, dangling references.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A training sample crossed a split boundary it must not cross.
class LeakageError : public DataError {
 public:
  explicit LeakageError(const std::string& msg) : DataError(msg) {}
};

// Non-finite values, divergence, anything numeric that must fail fast.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatch feeding a kernel.
class ShapeError : public NumericError {
 public:
  explicit ShapeError(const std::string& msg) : NumericError(msg) {}
};

// Operation called out of order (backward before evaluate, double fuse, ...).
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lmcd
