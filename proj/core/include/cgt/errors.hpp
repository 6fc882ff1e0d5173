#pragma once

#include <stdexcept>
#include <string>

namespace cgt {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or inconsistent component settings.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Precondition of an operation violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, solver non-convergence and similar numeric failures.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed file content; the message names the offending path and field.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Synthetic sample generation could not satisfy its constraints.
class GenerationError : public Error {
public:
    using Error::Error;
};

} // namespace cgt
