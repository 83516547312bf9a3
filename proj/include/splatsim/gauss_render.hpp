// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "splatsim/geometry.hpp"
#include "splatsim/image.hpp"

namespace splatsim::render {

/// Renderable anisotropic Gaussian: mean, RGB color (degree-0 harmonic),
/// unit quaternion (w, x, y, z), positive scales, opacity.
struct GaussianPrimitive {
    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    Eigen::Vector3d c = Eigen::Vector3d::Constant(0.5);
    Eigen::Vector4d r = Eigen::Vector4d(1, 0, 0, 0);
    Eigen::Vector3d s = Eigen::Vector3d::Constant(0.01);
    double sigma = 0.5;
};

/// Sigma = Rot(r) * diag(s)^2 * Rot(r)^T. The quaternion is normalized
/// internally.
Eigen::Matrix3d covariance3d(const Eigen::Vector4d& r, const Eigen::Vector3d& s);

/// Rotation matrix of a normalized quaternion (w, x, y, z).
Eigen::Matrix3d quat_to_rotation(const Eigen::Vector4d& q);

struct Splat2D {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d; // symmetric positive-definite, eigenvalues >= 1e-8
    double depth;
    Eigen::Vector3d color;
    double opacity;
};

/// EWA local-affine projection: cov2d = J W Sigma W^T J^T + 0.3 I, with the
/// perspective Jacobian J at the mean and W the camera rotation. Throws
/// BehindCamera for means at depth <= 0.
Splat2D project_gaussian(const geometry::Camera& cam, const GaussianPrimitive& g);

struct RenderOptions {
    int tile_size = 16;
    double alpha_cutoff = 1.0 / 255.0; // contributions below are skipped
    double transmit_stop = 1e-4;       // stop compositing below this transmittance
    Eigen::Vector3d background = Eigen::Vector3d::Zero();

    /// Cutoff and early-stop disabled: every splat reaches every pixel,
    /// matching the reference renderer term for term.
    static RenderOptions exact(const Eigen::Vector3d& bg = Eigen::Vector3d::Zero()) {
        RenderOptions o;
        o.alpha_cutoff = 0.0;
        o.transmit_stop = 0.0;
        o.background = bg;
        return o;
    }
};

struct RenderedImage {
    Image pixels;
    Eigen::Vector3d background;
};

/// Per-pixel compositing diagnostics: sum of composited weights and the
/// final transmittance (their sum telescopes to 1).
struct RenderStats {
    int width = 0, height = 0;
    std::vector<double> weight_sum;
    std::vector<double> transmittance;
};

/// Tile-based front-to-back alpha compositing, parallel over tiles.
RenderedImage rasterize(std::span<const GaussianPrimitive> scene, const geometry::Camera& cam,
                        const RenderOptions& options = {}, RenderStats* stats = nullptr);

/// Serial reference: every splat evaluated at every pixel with a full
/// global depth sort, no tiling, no cutoff, no early stop.
RenderedImage rasterize_reference(std::span<const GaussianPrimitive> scene,
                                  const geometry::Camera& cam,
                                  const Eigen::Vector3d& background = Eigen::Vector3d::Zero(),
                                  RenderStats* stats = nullptr);

struct GaussianGrads {
    Eigen::Vector3d dp = Eigen::Vector3d::Zero();
    Eigen::Vector3d dc = Eigen::Vector3d::Zero();
    Eigen::Vector4d dr = Eigen::Vector4d::Zero();
    Eigen::Vector3d ds = Eigen::Vector3d::Zero();
    double dsigma = 0.0;
};

/// Exact gradients of sum(dL_dI . I) with respect to every primitive
/// parameter, using the same cutoff/early-stop masks as the forward pass.
/// Per-tile partial sums are reduced in fixed tile order, so results are
/// bit-reproducible across thread counts.
std::vector<GaussianGrads> rasterize_backward(std::span<const GaussianPrimitive> scene,
                                              const geometry::Camera& cam, const Image& dL_dI,
                                              const RenderOptions& options = {});

}  // namespace splatsim::render
