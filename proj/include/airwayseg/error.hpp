#pragma once

#include <stdexcept>
#include <string>

namespace airwayseg {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Two grids (or tensors) that must be aligned are not.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent file content (headers, CSV, JSON specs).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A quantity that has no defined value for the given input.
class UndefinedError : public Error {
 public:
  using Error::Error;
};

}  // namespace airwayseg
