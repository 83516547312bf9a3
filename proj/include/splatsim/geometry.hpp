// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include "splatsim/errors.hpp"

namespace splatsim::geometry {

/// Pinhole camera with projection P = K [R | t], world -> camera.
/// Pixel convention: centers at integer coordinates, origin top-left,
/// +x right, +y down.
struct Camera {
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    int width = 0;
    int height = 0;

    Eigen::Vector3d center() const { return -R.transpose() * t; }

    /// Checks R orthonormality/det and K shape; throws std::invalid_argument.
    void validate() const;
};

struct Projection {
    Eigen::Vector2d pixel;
    double depth; // camera-space z, meters
};

/// Perspective projection. Throws BehindCamera if the camera-space depth
/// is <= 0.
Projection project(const Camera& cam, const Eigen::Vector3d& p);

/// Inverse of project at the given depth.
Eigen::Vector3d unproject(const Camera& cam, const Eigen::Vector2d& pixel, double depth);

/// World-frame line through a pixel: moment = o x d, |direction| = 1.
struct PluckerRay {
    Eigen::Vector3d moment;
    Eigen::Vector3d direction;
};

PluckerRay plucker(const Camera& cam, const Eigen::Vector2d& pixel);

}  // namespace splatsim::geometry
