#pragma once

#include <stdexcept>
#include <string>

namespace lobforge {

// Base of every error raised by the library. The CLI maps each subclass to
// a distinct process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or invariant-violating input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or parameters during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Shape mismatches, non-finite tensors and other broken internal contracts.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace lobforge
