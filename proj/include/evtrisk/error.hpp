#pragma once

#include <stdexcept>
#include <string>

namespace evtrisk {

/// Rejected input: malformed files, out-of-range options, violated data preconditions.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical procedure could not produce a usable result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Kernel fit with too few effective points, or a singular local design.
class DegenerateFitError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Iterative solver exhausted its budget.
class ConvergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A closed-form expression hit one of its singularities.
class PoleError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace evtrisk
