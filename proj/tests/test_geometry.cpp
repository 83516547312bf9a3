// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>

#include <Eigen/Geometry>

#include "splatsim/geometry.hpp"

using namespace splatsim;
using geometry::Camera;

namespace {

Camera basic_camera() {
    Camera cam;
    cam.K << 100, 0, 64, 0, 100, 64, 0, 0, 1;
    cam.width = 128;
    cam.height = 128;
    return cam;
}

Camera random_camera(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Camera cam = basic_camera();
    const Eigen::Vector3d axis = Eigen::Vector3d(u(rng), u(rng), u(rng)).normalized();
    cam.R = Eigen::AngleAxisd(u(rng) * M_PI, axis).toRotationMatrix();
    cam.t = {u(rng), u(rng), 3.0 + u(rng)};
    cam.K(0, 0) = 80 + 40 * u(rng);
    cam.K(1, 1) = 80 + 40 * u(rng);
    return cam;
}

}  // namespace

TEST_CASE("project on-axis and one-pixel offset") {
    const Camera cam = basic_camera();

    const auto on_axis = geometry::project(cam, {0, 0, 2});
    CHECK(on_axis.pixel.x() == doctest::Approx(64).epsilon(1e-12));
    CHECK(on_axis.pixel.y() == doctest::Approx(64).epsilon(1e-12));
    CHECK(on_axis.depth == doctest::Approx(2).epsilon(1e-12));

    const auto off = geometry::project(cam, {0.02, 0, 2});
    CHECK(off.pixel.x() == doctest::Approx(65).epsilon(1e-12));
    CHECK(off.pixel.y() == doctest::Approx(64).epsilon(1e-12));

    CHECK_THROWS_AS(geometry::project(cam, {0, 0, -1}), BehindCamera);
    CHECK_THROWS_AS(geometry::project(cam, {0, 0, 0}), BehindCamera);
}

TEST_CASE("project and unproject are inverse at the returned depth") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int it = 0; it < 500; ++it) {
        const Camera cam = random_camera(rng);
        const Eigen::Vector3d pc{u(rng), u(rng), 1.0 + 2.0 * std::abs(u(rng))};
        const Eigen::Vector3d p = cam.R.transpose() * (pc - cam.t);

        const auto proj = geometry::project(cam, p);
        const Eigen::Vector3d back = geometry::unproject(cam, proj.pixel, proj.depth);
        CHECK((back - p).norm() < 1e-9);

        // Reverse composition from a pixel.
        const Eigen::Vector2d pixel{u(rng) * 60 + 64, u(rng) * 60 + 64};
        const double depth = 1.0 + std::abs(u(rng));
        const Eigen::Vector3d point = geometry::unproject(cam, pixel, depth);
        const auto reproj = geometry::project(cam, point);
        CHECK((reproj.pixel - pixel).norm() < 1e-9);
        CHECK(reproj.depth == doctest::Approx(depth).epsilon(1e-12));
    }
}

TEST_CASE("plucker rays") {
    SUBCASE("ray through the optical center of an identity camera") {
        const Camera cam = basic_camera();
        const auto ray = geometry::plucker(cam, {64, 64});
        CHECK(ray.moment.norm() < 1e-12); // origin ray has zero moment
        CHECK((ray.direction - Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);
    }

    SUBCASE("hand-computed moment for a shifted origin") {
        // o = (1, 0, 0), d = (0, 0, 1): moment = o x d = (0, -1, 0).
        Camera cam = basic_camera();
        cam.t = -(cam.R * Eigen::Vector3d(1, 0, 0)); // center at (1,0,0)
        const auto ray = geometry::plucker(cam, {64, 64});
        CHECK((ray.direction - Eigen::Vector3d(0, 0, 1)).norm() < 1e-12);
        CHECK((ray.moment - Eigen::Vector3d(0, -1, 0)).norm() < 1e-12);
    }

    SUBCASE("moment is orthogonal to direction, and |direction| = 1") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int it = 0; it < 500; ++it) {
            const Camera cam = random_camera(rng);
            const Eigen::Vector2d pixel{u(rng) * 60 + 64, u(rng) * 60 + 64};
            const auto ray = geometry::plucker(cam, pixel);
            CHECK(std::abs(ray.moment.dot(ray.direction)) < 1e-9);
            CHECK(std::abs(ray.direction.norm() - 1.0) < 1e-9);
        }
    }

    SUBCASE("encoding is invariant to sliding the origin along the ray") {
        // plucker(o, d) == plucker(o + alpha d, d): moment = o x d is
        // unchanged because d x d = 0.
        const Eigen::Vector3d o{0.3, -0.2, 0.7};
        const Eigen::Vector3d d = Eigen::Vector3d(0.1, 0.4, 0.9).normalized();
        for (double alpha : {-2.0, 0.5, 3.0}) {
            const Eigen::Vector3d slid = o + alpha * d;
            CHECK((o.cross(d) - slid.cross(d)).norm() < 1e-12);
        }
    }
}

TEST_CASE("camera validation") {
    Camera cam = basic_camera();
    CHECK_NOTHROW(cam.validate());

    Camera bad_r = cam;
    bad_r.R(0, 0) = 2.0;
    CHECK_THROWS(bad_r.validate());

    Camera bad_k = cam;
    bad_k.K(1, 0) = 0.5;
    CHECK_THROWS(bad_k.validate());

    Camera reflected = cam;
    reflected.R = -Eigen::Matrix3d::Identity(); // det = -1
    CHECK_THROWS(reflected.validate());
}
