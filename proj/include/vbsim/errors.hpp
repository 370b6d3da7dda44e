#pragma once

#include <stdexcept>
#include <string>

namespace vbsim {

/// Invalid configuration or precondition violation detected at input time.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A solver or simulation could not produce a trustworthy result
/// (blow-up, CFL violation, singular system, population cap).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PopulationCapExceeded : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class CflViolation : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Internal bookkeeping went wrong (e.g. an event refers to a particle that
/// no longer exists). Never swallowed.
class StaleIndexError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace vbsim
