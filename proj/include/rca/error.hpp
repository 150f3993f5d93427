#pragma once

#include <stdexcept>
#include <string>

namespace rca {

/// Base of every error the toolkit throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An API called outside its contract (bad index, non-scalar loss, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A batch schedule that cannot be executed, e.g. an empty batch.
class SchedulingError : public UsageError {
 public:
  using UsageError::UsageError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data. The message carries file and line.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A loss or parameter became NaN/Inf during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace rca
