#pragma once

#include <stdexcept>
#include <string>

namespace drbert {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not conform for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Bad user input: malformed data files, out-of-range spans, invalid configs.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values met while differentiating or checking gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training loss became NaN or infinite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind {
    kIo,
    kNotACheckpoint,
    kVersionMismatch,
    kTruncated,
    kCorrupt,
    kShapeMismatch,
    kLayerCountMismatch,
  };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace drbert
