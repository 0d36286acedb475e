#pragma once

#include <stdexcept>
#include <string>

namespace marfe {

/// Shapes of two tabular objects do not agree (states, actions, horizon).
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A configuration or argument violates a documented precondition.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Malformed file content. The message carries line/field context.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A loaded or constructed object failed validation.
struct InvariantError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace marfe
