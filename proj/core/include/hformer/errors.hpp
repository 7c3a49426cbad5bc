#pragma once

#include <stdexcept>
#include <string>

namespace hformer {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched tensor dimensions or incompatible operand shapes.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid configuration: unsupported kernel size, violated divisibility
// constraint, bad hyperparameter.
struct ConfigError : Error {
    using Error::Error;
};

// Out-of-range gather/scatter index.
struct IndexError : Error {
    using Error::Error;
};

// Autodiff contract violations: non-scalar loss, double backward, loss
// from a different tape.
struct TapeError : Error {
    using Error::Error;
};

// Missing or unreadable data files, malformed manifests.
struct DataError : Error {
    using Error::Error;
};

// Malformed binary payloads; message carries the byte offset.
struct ParseError : Error {
    using Error::Error;
};

// NaN/Inf where the contract forbids it.
struct NumericError : Error {
    using Error::Error;
};

} // namespace hformer
