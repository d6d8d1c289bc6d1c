#pragma once

#include <stdexcept>
#include <string>

namespace qcl {

// Base for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/axis mismatch between tensors. Message names the offending axis.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value (counts, rates, enum combos).
struct ConfigError : Error {
    using Error::Error;
};

// Mathematically degenerate input (zero norm, zero variance).
struct DegenerateInputError : Error {
    using Error::Error;
};

// File parse failure; message carries byte or line offset.
struct IngestError : Error {
    using Error::Error;
};

// Caller violated an API contract (non-unit rows, missing gradients).
struct ContractError : Error {
    using Error::Error;
};

// Non-finite values where finite math was required.
struct NumericError : Error {
    using Error::Error;
};

// Operation not defined for this configuration (e.g. multi-channel decomposition).
struct UnsupportedError : Error {
    using Error::Error;
};

// Training diverged (non-finite loss).
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace qcl
