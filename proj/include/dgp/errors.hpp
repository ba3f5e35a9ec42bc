#pragma once

#include <stdexcept>
#include <string>

namespace dgp {

// Invalid architecture/schedule/config combinations.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad runtime arguments (shape mismatches, out-of-range indices, ...).
struct DomainError : std::invalid_argument {
    explicit DomainError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Operation not valid in the current object state (e.g. double BN->IN swap).
struct StateError : std::logic_error {
    explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

// Corrupt or incompatible files.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dgp
