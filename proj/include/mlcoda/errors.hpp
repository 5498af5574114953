#pragma once

#include <stdexcept>
#include <string>

namespace mlcoda {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid input values: zero or negative parts, missing values, bad files.
class DataError : public Error {
public:
    using Error::Error;
};

/// Dimension or total mismatch between objects that must agree.
class ShapeError : public DataError {
public:
    using DataError::DataError;
};

/// Design matrix is rank deficient.
class DegenerateDesign : public DataError {
public:
    using DataError::DataError;
};

/// Sampler could not initialise or the target density is unusable.
class SamplingError : public Error {
public:
    using Error::Error;
};

/// Bad invocation: unknown flags, missing required options.
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace mlcoda
