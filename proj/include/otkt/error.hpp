#pragma once

#include <stdexcept>
#include <string>

namespace otkt {

// Base of every error this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for the named operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input violates a documented precondition (bad length, reserved token, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Malformed file or config contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Bad command line or run configuration: unknown key, missing key, bad
// value. Commands map it to the usage exit code.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace otkt
