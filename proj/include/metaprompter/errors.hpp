#pragma once

#include <stdexcept>
#include <string>

namespace mpr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a computation, or a non-finite gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A vector whose norm is too small for a cosine or normalization.
class DegenerateVectorError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Misuse of an API (e.g. backward from a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Not enough classes or documents to draw an episode.
class SamplingError : public Error {
 public:
  using Error::Error;
};

/// A label in the label set has no support samples.
class MissingClassError : public Error {
 public:
  using Error::Error;
};

}  // namespace mpr
