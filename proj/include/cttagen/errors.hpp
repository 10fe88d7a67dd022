#pragma once

#include <stdexcept>
#include <string>

namespace cttagen {

// Shape disagreements between operands (messages carry both shapes).
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad values passed by the caller (negative weights, out-of-range steps, ...).
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Operation not valid in the object's current state (missing grads,
// backward re-run, untrained generator, ...).
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

// Iterative solver ran out of iterations; carries the last residual.
struct ConvergenceError : std::runtime_error {
    double residual;
    ConvergenceError(const std::string& msg, double res)
        : std::runtime_error(msg), residual(res) {}
};

// Filesystem / serialization failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace cttagen
