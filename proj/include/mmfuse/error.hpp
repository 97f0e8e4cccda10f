#pragma once

#include <stdexcept>
#include <string>

namespace mmfuse {

// Invalid configuration, shape mismatch, or violated precondition. Exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Leakage audit failure. Exit code 2.
class AuditError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed, inconsistent, or insufficient input data. Exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// AUROC requested on a label vector with a single class.
class UndefinedAurocError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values or degenerate numerics during optimization. Exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A row collapsed to (near) zero norm before l2 normalization.
class DegenerateEmbeddingError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace mmfuse
