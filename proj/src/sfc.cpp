// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#include "splatsim/sfc.hpp"

#include <cmath>
#include <limits>

namespace splatsim::sfc {

GridSpec GridSpec::fit(std::span<const Eigen::Vector3d> points, double grid_size_m) {
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::max());
    for (const auto& p : points) lo = lo.cwiseMin(p);
    if (points.empty()) lo.setZero();
    GridSpec spec;
    spec.grid_size_m = grid_size_m;
    spec.origin_m = lo - Eigen::Vector3d::Constant(grid_size_m);
    return spec;
}

SfcPattern SfcPattern::parse(const std::string& name) {
    if (name == "z") return zorder();
    if (name == "zt") return zorder_trans();
    if (name == "h") return hilbert();
    if (name == "ht") return hilbert_trans();
    throw std::invalid_argument("unknown SFC pattern '" + name + "' (expected z, zt, h, ht)");
}

std::string SfcPattern::name() const {
    const bool trans = axis_permutation == std::array<int, 3>{2, 1, 0};
    if (curve == Curve::ZOrder) return trans ? "zt" : "z";
    return trans ? "ht" : "h";
}

const std::array<SfcPattern, 4>& pattern_cycle() {
    static const std::array<SfcPattern, 4> cycle = {
        SfcPattern::zorder(),
        SfcPattern::zorder_trans(),
        SfcPattern::hilbert(),
        SfcPattern::hilbert_trans(),
    };
    return cycle;
}

GridCoord quantize(const Eigen::Vector3d& p, const GridSpec& spec) {
    GridCoord g;
    std::uint16_t* out[3] = {&g.x, &g.y, &g.z};
    static const char* axis_name[3] = {"x", "y", "z"};
    for (int i = 0; i < 3; ++i) {
        const double q = std::floor((p[i] - spec.origin_m[i]) / spec.grid_size_m);
        if (!(q >= 0.0) || q >= 65536.0) {
            throw OutOfRange("quantize: axis " + std::string(axis_name[i]) + " cell " +
                             std::to_string(q) + " outside [0, 65536)");
        }
        *out[i] = static_cast<std::uint16_t>(q);
    }
    return g;
}

namespace {

// Spread the low 16 bits of v three apart (bit k -> bit 3k).
inline std::uint64_t spread3(std::uint64_t v) {
    v &= 0xFFFFu;
    v = (v | (v << 16)) & 0x0000FF0000FFull;
    v = (v | (v << 8)) & 0x00F00F00F00Full;
    v = (v | (v << 4)) & 0x0C30C30C30C3ull;
    v = (v | (v << 2)) & 0x249249249249ull;
    return v;
}

inline std::uint16_t compact3(std::uint64_t v) {
    v &= 0x249249249249ull;
    v = (v ^ (v >> 2)) & 0x0C30C30C30C3ull;
    v = (v ^ (v >> 4)) & 0x00F00F00F00Full;
    v = (v ^ (v >> 8)) & 0x0000FF0000FFull;
    v = (v ^ (v >> 16)) & 0x00000000FFFFull;
    return static_cast<std::uint16_t>(v);
}

}  // namespace

std::uint64_t morton_encode(GridCoord g) {
    return spread3(g.x) | (spread3(g.y) << 1) | (spread3(g.z) << 2);
}

GridCoord morton_decode(std::uint64_t code) {
    return {compact3(code), compact3(code >> 1), compact3(code >> 2)};
}

// Hilbert curve in Skilling's transpose form ("Programming the Hilbert
// Curve", AIP Conf. Proc. 707, 2004). The transpose axes are packed with
// X[0] taking the most significant bit of each 3-bit level.

std::uint64_t hilbert_encode(GridCoord g, int order) {
    std::uint32_t X[3] = {g.x, g.y, g.z};

    const std::uint32_t top = 1u << (order - 1);
    for (std::uint32_t q = top; q > 1; q >>= 1) {
        const std::uint32_t p = q - 1;
        for (int i = 0; i < 3; ++i) {
            if (X[i] & q) {
                X[0] ^= p;  // invert low bits of the leading axis
            } else {
                const std::uint32_t t = (X[0] ^ X[i]) & p;
                X[0] ^= t;
                X[i] ^= t;
            }
        }
    }
    // Gray encode.
    X[1] ^= X[0];
    X[2] ^= X[1];
    std::uint32_t t = 0;
    for (std::uint32_t q = top; q > 1; q >>= 1) {
        if (X[2] & q) t ^= q - 1;
    }
    for (int i = 0; i < 3; ++i) X[i] ^= t;

    std::uint64_t code = 0;
    for (int k = order - 1; k >= 0; --k) {
        code = (code << 3) | (((X[0] >> k) & 1u) << 2) | (((X[1] >> k) & 1u) << 1) |
               ((X[2] >> k) & 1u);
    }
    return code;
}

GridCoord hilbert_decode(std::uint64_t code, int order) {
    std::uint32_t X[3] = {0, 0, 0};
    for (int k = 0; k < order; ++k) {
        X[0] |= static_cast<std::uint32_t>((code >> (3 * k + 2)) & 1u) << k;
        X[1] |= static_cast<std::uint32_t>((code >> (3 * k + 1)) & 1u) << k;
        X[2] |= static_cast<std::uint32_t>((code >> (3 * k)) & 1u) << k;
    }

    const std::uint32_t n = 2u << (order - 1);
    // Gray decode.
    std::uint32_t t = X[2] >> 1;
    X[2] ^= X[1];
    X[1] ^= X[0];
    X[0] ^= t;

    for (std::uint32_t q = 2; q != n; q <<= 1) {
        const std::uint32_t p = q - 1;
        for (int i = 2; i >= 0; --i) {
            if (X[i] & q) {
                X[0] ^= p;
            } else {
                t = (X[0] ^ X[i]) & p;
                X[0] ^= t;
                X[i] ^= t;
            }
        }
    }
    return {static_cast<std::uint16_t>(X[0]), static_cast<std::uint16_t>(X[1]),
            static_cast<std::uint16_t>(X[2])};
}

std::uint64_t curve_encode(GridCoord g, Curve curve, int order) {
    return curve == Curve::ZOrder ? morton_encode(g) : hilbert_encode(g, order);
}

GridCoord curve_decode(std::uint64_t code, Curve curve, int order) {
    return curve == Curve::ZOrder ? morton_decode(code) : hilbert_decode(code, order);
}

std::uint64_t sfc_encode_coord(GridCoord g, const SfcPattern& pattern, int order) {
    const std::uint16_t c[3] = {g.x, g.y, g.z};
    GridCoord permuted{c[pattern.axis_permutation[0]], c[pattern.axis_permutation[1]],
                       c[pattern.axis_permutation[2]]};
    return curve_encode(permuted, pattern.curve, order);
}

std::uint64_t sfc_encode(const Eigen::Vector3d& p, const GridSpec& spec,
                         const SfcPattern& pattern) {
    return sfc_encode_coord(quantize(p, spec), pattern);
}

}  // namespace splatsim::sfc
