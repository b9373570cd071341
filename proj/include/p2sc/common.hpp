#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace p2sc {

// Base error for all library failures.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration (bad hyperparameters, divisibility violations, unknown keys).
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or unreadable data files.
struct DataError : Error {
    using Error::Error;
};

// Non-finite values encountered where finite values are required.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace p2sc

#define P2SC_CHECK(cond, msg)                     \
    do {                                          \
        if (!(cond)) {                            \
            std::ostringstream oss_;              \
            oss_ << msg;                          \
            throw ::p2sc::Error(oss_.str());      \
        }                                         \
    } while (0)

#define P2SC_CHECK_AS(cond, ErrType, msg)         \
    do {                                          \
        if (!(cond)) {                            \
            std::ostringstream oss_;              \
            oss_ << msg;                          \
            throw ErrType(oss_.str());            \
        }                                         \
    } while (0)
