#pragma once

#include <stdexcept>
#include <string>

namespace cxlsim {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unusable run configuration or CLI arguments (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Unreadable or unwritable file (exit code 2).
class IoError : public Error {
public:
    using Error::Error;
};

// Malformed input document: bad JSON, missing header, unknown event kind (exit code 3).
class ParseError : public Error {
public:
    using Error::Error;
};

// Structurally well-formed input that violates an invariant: cycles,
// duplicate ids, timestamp regressions (exit code 3).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Failure while running a simulation, e.g. an overlapping allocation
// replayed against a live interval (exit code 4).
class SimError : public Error {
public:
    using Error::Error;
};

} // namespace cxlsim
