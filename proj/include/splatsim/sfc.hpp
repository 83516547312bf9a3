// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "splatsim/errors.hpp"

namespace splatsim::sfc {

/// Uniform quantization grid. Cell (0,0,0) starts at origin_m; each axis
/// addresses 2^16 cells of grid_size_m.
struct GridSpec {
    double grid_size_m = 0.004;
    Eigen::Vector3d origin_m = Eigen::Vector3d::Zero();

    /// Default origin rule: axis-aligned minimum of the given points minus
    /// one cell.
    static GridSpec fit(std::span<const Eigen::Vector3d> points, double grid_size_m);
};

struct GridCoord {
    std::uint16_t x = 0, y = 0, z = 0;

    bool operator==(const GridCoord&) const = default;
};

enum class Curve { ZOrder, Hilbert };

/// One of the four serialization patterns: a curve plus an axis permutation
/// applied to the quantized coordinate before encoding.
struct SfcPattern {
    Curve curve = Curve::ZOrder;
    std::array<int, 3> axis_permutation = {0, 1, 2};

    static SfcPattern zorder() { return {Curve::ZOrder, {0, 1, 2}}; }
    static SfcPattern zorder_trans() { return {Curve::ZOrder, {2, 1, 0}}; }
    static SfcPattern hilbert() { return {Curve::Hilbert, {0, 1, 2}}; }
    static SfcPattern hilbert_trans() { return {Curve::Hilbert, {2, 1, 0}}; }

    /// Parses "z", "zt", "h", "ht".
    static SfcPattern parse(const std::string& name);
    std::string name() const;
};

/// The four patterns in their default cycling order.
const std::array<SfcPattern, 4>& pattern_cycle();

inline constexpr int kCoordBits = 16;
inline constexpr int kCodeBits = 48;

/// floor((p - origin) / G) per axis. Throws OutOfRange if any axis falls
/// outside [0, 2^16).
GridCoord quantize(const Eigen::Vector3d& p, const GridSpec& spec);

/// Z-order code: bit triple at level k is (z_k, y_k, x_k), x least
/// significant.
std::uint64_t morton_encode(GridCoord g);
GridCoord morton_decode(std::uint64_t code);

/// Hilbert index via the Skilling transpose construction. `order` is the
/// number of bits per axis; coordinates must be < 2^order.
std::uint64_t hilbert_encode(GridCoord g, int order = kCoordBits);
GridCoord hilbert_decode(std::uint64_t code, int order = kCoordBits);

std::uint64_t curve_encode(GridCoord g, Curve curve, int order = kCoordBits);
GridCoord curve_decode(std::uint64_t code, Curve curve, int order = kCoordBits);

/// Quantize, permute axes, then encode on the pattern's curve.
std::uint64_t sfc_encode(const Eigen::Vector3d& p, const GridSpec& spec, const SfcPattern& pattern);

/// Pattern-aware encode of an already-quantized coordinate.
std::uint64_t sfc_encode_coord(GridCoord g, const SfcPattern& pattern, int order = kCoordBits);

}  // namespace splatsim::sfc
