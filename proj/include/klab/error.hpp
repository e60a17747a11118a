#pragma once

#include <stdexcept>
#include <string>

namespace klab {

// Base of every exception thrown by the library. Callers that only need to
// report a failure can catch this; the CLI maps the subclasses to exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Precondition violated by a caller-supplied argument.
class ArgumentError : public Error {
public:
  using Error::Error;
};

// Vector/matrix sizes do not conform.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Malformed input file contents.
class ParseError : public Error {
public:
  using Error::Error;
};

// Filesystem failure (open/read/write), message carries the path.
class IoError : public Error {
public:
  using Error::Error;
};

// A dense diagnostic was asked to densify a matrix beyond the configured cap.
class SizeCapError : public Error {
public:
  using Error::Error;
};

// The linear system is not consistent (Ax = b has no exact solution).
class ConsistencyError : public Error {
public:
  using Error::Error;
};

namespace detail {

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

} // namespace detail
} // namespace klab
