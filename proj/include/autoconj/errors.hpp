#pragma once

#include <stdexcept>
#include <string>

namespace autoconj {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A hyperparameter or option violates its declared range.
class ConstraintError : public Error {
 public:
  using Error::Error;
};

/// An input lies outside the domain of the operation (e.g. a class label not in {-1, +1}).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Matrix shapes or vector lengths disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Factorization failure, overflow, or a non-finite intermediate.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Inverse-CDF sampling did not converge.
class SamplingError : public Error {
 public:
  using Error::Error;
};

}  // namespace autoconj
