#pragma once

#include <stdexcept>
#include <string>

namespace batchverify {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed network, input or report documents.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Vector or matrix shapes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Arguments outside an operation's documented domain.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Raised when a solve cannot be trusted or cannot finish. Callers treat it
/// as a hard failure; the verdict is never guessed.
class SolverError : public Error {
public:
    using Error::Error;
};

class NumericalFailure : public SolverError {
public:
    using SolverError::SolverError;
};

class NodeLimitExceeded : public SolverError {
public:
    using SolverError::SolverError;
};

} // namespace batchverify
