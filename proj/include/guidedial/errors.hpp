#pragma once

#include <stdexcept>
#include <string>

namespace guidedial {

/// Malformed input file (bad JSON, missing field); carries the 1-based line when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

/// Input is well-formed but references something the schema does not allow.
class SchemaError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A value violates a documented invariant or precondition.
class ValidationError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A sample cannot be turned into model inputs within the configured length caps.
class EncodingError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values reached a place that requires finite ones.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Evaluation failed on one sample; the message names its index.
class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(const std::string& what, long sample) : std::runtime_error(what), sample_(sample) {}
  long sample() const { return sample_; }

 private:
  long sample_;
};

}  // namespace guidedial
