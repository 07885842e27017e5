#pragma once

#include <stdexcept>
#include <string>

namespace mnarvam {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration (priors, settings, generator or CLI config).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data that violates the panel contract.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Internal structures that disagree with each other (design vs. panel, etc.).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a broken positivity invariant inside the sampler.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DiagnosticError : public Error {
 public:
  using Error::Error;
};

class ComparisonError : public Error {
 public:
  using Error::Error;
};

}  // namespace mnarvam
