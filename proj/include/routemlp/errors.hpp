#pragma once

#include <stdexcept>
#include <string>

namespace routemlp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrix or layer dimensions do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input violates an operation's precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value reached an optimizer or loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An object was used with state it was not produced from (e.g. a stale forward cache).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A participant has no route in a routing table.
class RoutingError : public Error {
 public:
  using Error::Error;
};

/// Participants that a model cannot score (ID embedding without a trained vector).
class ExclusionError : public Error {
 public:
  using Error::Error;
};

}  // namespace routemlp
