#pragma once

#include <stdexcept>
#include <string>

namespace atres {

// Shape, argument, or precondition violations.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad input data or files (empty datasets, unreadable PNGs, malformed config).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN or Inf produced during a forward/backward pass or optimizer step.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Misuse of the autodiff tape (no graph, double backward).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace atres
