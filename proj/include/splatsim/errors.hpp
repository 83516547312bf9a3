// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace splatsim {

/// A point fell outside the addressable quantization volume.
struct OutOfRange : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A packed-code field value did not fit its configured bit width.
struct FieldOverflow : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Projection requested for a point at or behind the camera plane.
struct BehindCamera : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndexOutOfRange : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LengthMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File-format errors.
struct BadMagic : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BadVersion : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Truncated : std::runtime_error {
    std::size_t byte_offset;
    Truncated(const std::string& msg, std::size_t offset)
        : std::runtime_error(msg + " (at byte " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
};

}  // namespace splatsim
