#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mmtsvit {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape rule violated by an operation (mismatched extents, bad axis, ...).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration: hyperparameters, indivisible patch extents, unknown keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data violates a domain invariant (dates out of range, gaps too wide, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// Modalities cannot be fused as requested.
class FusionError : public Error {
public:
    using Error::Error;
};

/// API misuse: backward on a non-scalar, missing gradients, empty splits.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Malformed binary file. Carries the byte offset at which parsing failed.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

}  // namespace mmtsvit
