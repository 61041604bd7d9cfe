#pragma once

#include <stdexcept>
#include <string>

namespace grutv {

// Exit-code buckets used by the CLI: usage -> 1, data -> 2, numeric -> 3.
enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Bad arguments, bad call order, unusable configuration.
struct UsageError : Error {
  explicit UsageError(const std::string& msg) : Error(ErrorKind::usage, msg) {}
};

// Variant asked to do something its parameter set does not support.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(ErrorKind::usage, msg) {}
};

// Malformed input files; reported with line numbers where possible.
struct ParseError : Error {
  explicit ParseError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};

// Timestamps out of order, negative elapsed times.
struct OrderingError : Error {
  explicit OrderingError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};

// Shape mismatch between tensors/parameters; message names the operation.
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};

// A metric has no defined value on the given labels (single class, no positives).
struct UndefinedMetricError : Error {
  explicit UndefinedMetricError(const std::string& msg) : Error(ErrorKind::data, msg) {}
};

// Non-finite values produced by a primitive or a training step.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(ErrorKind::numeric, msg) {}
};

// Training loss went non-finite; message names the epoch.
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& msg) : Error(ErrorKind::numeric, msg) {}
};

// Sampler could not reach the target rate within the pass budget.
struct TerminationError : Error {
  explicit TerminationError(const std::string& msg) : Error(ErrorKind::numeric, msg) {}
};

}  // namespace grutv
