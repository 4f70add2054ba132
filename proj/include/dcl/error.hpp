#pragma once

#include <stdexcept>
#include <string>

namespace dcl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not line up with what an operation expects.
struct ShapeError : Error {
    using Error::Error;
};

/// Malformed or inconsistent dataset files.
struct DataError : Error {
    using Error::Error;
};

/// NaN/Inf encountered in activations, gradients or the loss.
struct NumericalError : Error {
    using Error::Error;
};

/// Invalid configuration; `key` names the offending field when known.
struct ConfigError : Error {
    ConfigError(const std::string& key, const std::string& detail)
        : Error(key.empty() ? detail : key + ": " + detail), key(key), detail(detail) {}
    std::string key;
    std::string detail;
};

}  // namespace dcl
