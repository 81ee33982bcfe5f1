#pragma once

#include <stdexcept>
#include <string>

namespace linecolor {

/// Caller passed an argument that violates an operation's contract
/// (shape mismatch, out-of-range scalar, malformed config).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input data failed validation (non-finite pixels, undecodable bytes).
class DataValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A frozen extractor or model was used before weights were loaded.
class NotInitializedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Checkpoint container could not be read or does not match the consumer.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss or gradient became NaN/Inf during training.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace linecolor
