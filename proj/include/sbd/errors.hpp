#pragma once

#include <stdexcept>
#include <string>

namespace sbd {

/// Violated precondition of an operation (dimension mismatch, bad rate, ...).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed input data: corpora, embeddings, model files.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : DataError {
  using DataError::DataError;
};

/// Input lacks something the requested operation needs (e.g. prosody).
struct UnsupportedInput : DataError {
  using DataError::DataError;
};

struct ChecksumError : DataError {
  using DataError::DataError;
};

/// Training diverged (non-finite loss).
struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace sbd
