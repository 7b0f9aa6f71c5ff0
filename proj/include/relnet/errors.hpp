#pragma once

#include <stdexcept>
#include <string>

namespace relnet {

// Shape disagreement between operands. The message names both shapes.
struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Bad experiment configuration (unknown model kind, nu < 1, ...). CLI exit code 1.
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// API misuse (cross-tape parent, reading an unflagged probe, non-scalar loss).
struct UsageError : std::logic_error {
    explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

// Non-finite value where the contract requires finiteness. CLI exit code 3.
struct NumericAbort : std::runtime_error {
    explicit NumericAbort(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace relnet
