// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "splatsim/errors.hpp"

namespace splatsim {

/// Row-major H x W x 3 image, channels in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data; // y-major, then x, then channel

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    Eigen::Vector3d pixel(int x, int y) const {
        return {at(x, y, 0), at(x, y, 1), at(x, y, 2)};
    }
    void set_pixel(int x, int y, const Eigen::Vector3d& rgb) {
        for (int c = 0; c < 3; ++c) at(x, y, c) = rgb[c];
    }

    bool same_shape(const Image& other) const {
        return width == other.width && height == other.height;
    }
};

/// Single-channel 8-bit image (foreground masks).
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

}  // namespace splatsim
