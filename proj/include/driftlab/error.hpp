#pragma once

#include <stdexcept>
#include <string>

namespace driftlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or violated precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// An iterative method hit its iteration cap.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, int iterations, double last_value,
                   double residual)
      : Error(what),
        iterations_(iterations),
        last_value_(last_value),
        residual_(residual) {}

  int iterations() const { return iterations_; }
  double last_value() const { return last_value_; }
  double residual() const { return residual_; }

 private:
  int iterations_;
  double last_value_;
  double residual_;
};

/// Training blew up. Carries the step at which the loss left the stable range.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step)
      : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

/// Malformed or inconsistent experiment configuration. The CLI maps it to exit 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file (bad magic, schema mismatch, truncated data).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace driftlab
