#pragma once

#include <stdexcept>
#include <string>

namespace restruct {

// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (files, reports, templates).
class DataError : public Error {
 public:
  using Error::Error;
};

// Bad invocation: missing flags, invalid agent spec, bad ratios.
class UsageError : public Error {
 public:
  using Error::Error;
};

// An answering agent misbehaved: malformed message, invalid answer, timeout.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace restruct
