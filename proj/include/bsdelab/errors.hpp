#pragma once

#include <stdexcept>
#include <string>

namespace bsdelab {

// Bad user-supplied parameters or config files. The message carries the
// offending field path (e.g. "model.window") when one is known.
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A requested operation exists but not for this combination of inputs
// (e.g. comparison checks in dimension d != 1).
struct UnsupportedError : std::invalid_argument {
    explicit UnsupportedError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Non-finite values produced by an iterative scheme; message names the step.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Regression system unusable even after ridge regularization.
struct RegressionError : std::runtime_error {
    explicit RegressionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Explicit PDE integration produced non-finite interior values.
struct InstabilityError : std::runtime_error {
    explicit InstabilityError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bsdelab
