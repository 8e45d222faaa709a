#pragma once

#include <stdexcept>
#include <string>

namespace rangeda {

// Base of every error thrown by the library. Subclasses name the failure
// category so callers (the CLI in particular) can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a mathematical precondition (empty cloud, bad probability...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// API misuse: non-scalar loss, missing gradient, argument outside its range.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Object is not in a state that allows the operation.
class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rangeda
