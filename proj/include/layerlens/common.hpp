#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace layerlens {

inline constexpr const char* kVersion = "0.1.0";

// Error taxonomy. Every failure mode surfaced by the library derives from
// Error so callers can catch one base type and still branch on specifics.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

struct StateError : Error {
    using Error::Error;
};

// Training produced a non-finite loss or gradient. Carries the epoch at
// which divergence was detected.
struct DivergedError : Error {
    int epoch;
    explicit DivergedError(int epoch_index)
        : Error("training diverged at epoch " + std::to_string(epoch_index)),
          epoch(epoch_index) {}
};

// A sweep grid is missing (width, ratio, seed) cells.
struct IncompleteGridError : Error {
    using Error::Error;
};

}  // namespace layerlens
