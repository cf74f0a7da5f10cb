#pragma once

#include <stdexcept>
#include <string>

namespace ardiff {

// Base class for all library errors so callers can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };

// A grid that cannot be partitioned into the requested number of blocks is a
// configuration problem wherever it surfaces (model, data, CLI flags).
struct NonDivisibleGrid : ConfigError { using ConfigError::ConfigError; };
struct ShapeMismatch : Error { using Error::Error; };
struct InvalidRange : Error { using Error::Error; };
struct TimestepOutOfRange : Error { using Error::Error; };
struct TimestepOrder : Error { using Error::Error; };
struct InvalidCount : Error { using Error::Error; };
struct EmptySupervision : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct CacheInvalidation : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct NonConvergedSqrt : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };

}  // namespace ardiff
