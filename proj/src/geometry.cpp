// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#include "splatsim/geometry.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace splatsim::geometry {

void Camera::validate() const {
    const Eigen::Matrix3d rtr = R.transpose() * R;
    if ((rtr - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        std::abs(R.determinant() - 1.0) > 1e-6) {
        throw std::invalid_argument("camera rotation is not a proper rotation matrix");
    }
    if (std::abs(K(1, 0)) > 0.0 || std::abs(K(2, 0)) > 0.0 || std::abs(K(2, 1)) > 0.0 ||
        K(0, 0) <= 0.0 || K(1, 1) <= 0.0) {
        throw std::invalid_argument("camera intrinsics must be upper-triangular with positive focals");
    }
    if (width <= 0 || height <= 0) {
        throw std::invalid_argument("camera image size must be positive");
    }
}

Projection project(const Camera& cam, const Eigen::Vector3d& p) {
    const Eigen::Vector3d pc = cam.R * p + cam.t;
    if (pc.z() <= 0.0) {
        throw BehindCamera("point at camera depth " + std::to_string(pc.z()));
    }
    const Eigen::Vector3d h = cam.K * pc;
    return {Eigen::Vector2d(h.x() / h.z(), h.y() / h.z()), pc.z()};
}

Eigen::Vector3d unproject(const Camera& cam, const Eigen::Vector2d& pixel, double depth) {
    // K is upper-triangular; solve K * dir = (px, py, 1) by back substitution.
    Eigen::Vector3d dir;
    dir.z() = 1.0 / cam.K(2, 2);
    dir.y() = (pixel.y() - cam.K(1, 2) * dir.z()) / cam.K(1, 1);
    dir.x() = (pixel.x() - cam.K(0, 1) * dir.y() - cam.K(0, 2) * dir.z()) / cam.K(0, 0);
    const Eigen::Vector3d pc = dir / dir.z() * depth; // camera point with z = depth
    return cam.R.transpose() * (pc - cam.t);
}

PluckerRay plucker(const Camera& cam, const Eigen::Vector2d& pixel) {
    const Eigen::Vector3d origin = cam.center();
    const Eigen::Vector3d through = unproject(cam, pixel, 1.0);
    const Eigen::Vector3d direction = (through - origin).normalized();
    return {origin.cross(direction), direction};
}

}  // namespace splatsim::geometry
