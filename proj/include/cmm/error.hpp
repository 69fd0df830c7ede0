#pragma once

#include <stdexcept>
#include <string>

namespace cmm {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid input: bad dimensions, broken invariants, malformed config.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A linear system that the caller asked us to solve exactly is singular.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

// The Ivanov slack budget could not be met within the outer-iteration budget.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, double best_slack)
      : Error(what), best_slack_(best_slack) {}
  double best_slack() const { return best_slack_; }

 private:
  double best_slack_;
};

}  // namespace cmm
