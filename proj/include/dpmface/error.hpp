#pragma once

#include <stdexcept>
#include <string>

namespace dpmface {

/// Base of every error raised by the library. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A parameter is outside its documented range (radius, sigma, grid, config).
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// Data handed to an operation has the wrong shape or modality.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Models handed to a pipeline do not fit together.
class InvalidConfiguration : public Error {
 public:
  using Error::Error;
};

/// An evaluation protocol cannot be satisfied by the data.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Iterative or factorization step broke down.
class NumericalFailure : public Error {
 public:
  NumericalFailure(const std::string& what, int completed = 0)
      : Error(what), completed_(completed) {}

  /// Number of components/steps that finished before the failure.
  int completed() const { return completed_; }

 private:
  int completed_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpmface
