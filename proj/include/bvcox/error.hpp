#pragma once

#include <stdexcept>
#include <string>

namespace bvcox {

// Bad input: malformed data, inconsistent dimensions, out-of-range settings.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Floating point breakdown (overflow, singular systems, indefinite variances).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An iterative procedure could not reach its stopping rule.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bvcox
