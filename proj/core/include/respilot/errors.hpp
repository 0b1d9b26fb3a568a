#pragma once

#include <stdexcept>
#include <string>

namespace respilot {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed arguments: dimension mismatches, bad indices, out-of-range parameters.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// A file could not be parsed or violates its schema.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A data object violates a documented invariant (e.g. a hand with 3 fingers).
class ValidationError : public Error {
public:
    using Error::Error;
};

class NoDataError : public Error {
public:
    using Error::Error;
};

/// Cholesky failed even after the maximum diagonal jitter.
class IllConditionedError : public Error {
public:
    using Error::Error;
};

class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// angle_map hit a (cos, sin) row whose norm is too small to define a direction.
class DegenerateRowError : public Error {
public:
    DegenerateRowError(const std::string& what, int row) : Error(what), row_(row) {}
    int row() const noexcept { return row_; }

private:
    int row_;
};

}  // namespace respilot
