#pragma once

#include <stdexcept>
#include <string>

namespace hpsl {

// Bad argument values (out-of-range counts, non-positive radii, ...).
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Structural problems in network configuration (width mismatches, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input text or binary data. Carries a position so callers can
// point at the offending line/byte.
struct ParseError : std::runtime_error {
    std::size_t position;  // line number for line formats, byte offset otherwise

    ParseError(const std::string& msg, std::size_t pos)
        : std::runtime_error(msg), position(pos) {}
};

// File system / OS level failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace hpsl
