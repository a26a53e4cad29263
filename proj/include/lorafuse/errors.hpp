#pragma once

#include <stdexcept>
#include <string>

namespace lorafuse {

// Base class for all library errors. Subtypes distinguish contract
// violations so callers (and tests) can react to the precise failure.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/matrix extents do not satisfy an operation's requirements.
struct DimensionError : Error {
    using Error::Error;
};

// A scalar argument is outside its documented domain.
struct ParameterError : Error {
    using Error::Error;
};

// A referenced id (layer, adapter) does not exist.
struct LookupError : Error {
    using Error::Error;
};

// An algebraic constraint on the inputs is violated (e.g. weight sums).
struct ConstraintError : Error {
    using Error::Error;
};

// Two adapters disagree on their layer sets or per-layer shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Adapter ranks are incompatible for the requested combination.
struct RankError : Error {
    using Error::Error;
};

// A linear system required by an operation is not invertible.
struct SingularityError : Error {
    using Error::Error;
};

// Partial inference was requested without a cached feature to reuse.
struct CacheMissError : Error {
    using Error::Error;
};

// An operation was invoked before its required state was recorded.
struct StateError : Error {
    using Error::Error;
};

// Series/profiles being combined are not defined on the same grid.
struct AlignmentError : Error {
    using Error::Error;
};

// File or stream level failure (missing magic, truncated payload, ...).
struct IoError : Error {
    using Error::Error;
};

}  // namespace lorafuse
