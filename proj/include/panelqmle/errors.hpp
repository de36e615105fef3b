#pragma once

#include <stdexcept>
#include <string>

namespace panelqmle {

// Bad input: malformed configs, invalid dimensions, out-of-range arguments.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Singular or ill-conditioned linear algebra, non-finite likelihood values.
class NumericDegeneracy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimizer or alternating scheme failed to make progress.
class ConvergenceFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace panelqmle
