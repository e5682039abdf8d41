#pragma once

#include <stdexcept>
#include <string>

namespace mmpfn {

// Base of every exception thrown by the library. The category determines the
// process exit code used by the command line tool.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of an object's lifecycle, e.g. running backward twice on one tape.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmpfn
