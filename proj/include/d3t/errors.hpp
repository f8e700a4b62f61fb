#pragma once

#include <stdexcept>
#include <string>

namespace d3t {

/// Invalid configuration or arguments supplied by the caller.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An operation was invoked outside its precondition (wrong phase, wrong domain, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// NaN/Inf appeared in a forward pass, loss, or parameter update.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed on-disk data (bad magic, truncated file, schema mismatch).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace d3t
