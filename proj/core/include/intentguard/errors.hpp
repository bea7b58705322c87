#pragma once

#include <stdexcept>
#include <string>

namespace intentguard {

/// Base class for all intentguard errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A domain invariant or precondition was violated.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A backend was asked for a capability it does not declare.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// A remote call failed at the transport level (after retries, where applicable).
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Structured output from a model could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A training run hit an unrecoverable state (e.g. non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace intentguard
