#pragma once

#include <stdexcept>
#include <string>

namespace faircc {

// Shape/extent mismatches between tensors or between a tensor and an op.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid configuration values (non-positive alpha, indivisible head count, ...).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A caller broke an API precondition (empty store, out-of-range target, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// A computation produced NaN/Inf; every op checks its output.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem / serialization failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace faircc
