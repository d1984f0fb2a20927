#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace planktonfl {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid model spec, experiment setting or config file entry.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unreadable or inconsistent input data.
class DataError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// A non-finite value appeared in a layer's activations.
class NumericFault : public Error {
public:
    NumericFault(std::size_t layer, const std::string& what)
        : Error("numeric fault at layer " + std::to_string(layer) + ": " + what), layer_(layer) {}

    std::size_t layer() const noexcept { return layer_; }

private:
    std::size_t layer_;
};

/// Violation of the client/server exchange contract (aggregation inputs).
class ProtocolError : public Error {
public:
    using Error::Error;
};

enum class DecodeFailure {
    bad_magic,
    version_mismatch,
    truncated,
    count_mismatch,
    checksum_mismatch,
};

inline const char* to_string(DecodeFailure failure) {
    switch (failure) {
    case DecodeFailure::bad_magic: return "bad magic";
    case DecodeFailure::version_mismatch: return "version mismatch";
    case DecodeFailure::truncated: return "truncated payload";
    case DecodeFailure::count_mismatch: return "count mismatch";
    case DecodeFailure::checksum_mismatch: return "checksum mismatch";
    }
    return "unknown";
}

class DecodeError : public Error {
public:
    DecodeError(DecodeFailure failure, const std::string& detail)
        : Error(std::string(to_string(failure)) + ": " + detail), failure_(failure) {}

    DecodeFailure failure() const noexcept { return failure_; }

private:
    DecodeFailure failure_;
};

} // namespace planktonfl
