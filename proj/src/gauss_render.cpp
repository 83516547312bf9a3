// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#include "splatsim/gauss_render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Eigenvalues>

namespace splatsim::render {

namespace {

constexpr double kCovDilation = 0.3;   // px^2, antialias stabilization
constexpr double kEigenFloor = 1e-8;

struct Prepared {
    int index = 0; // input index
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
    Eigen::Matrix2d inv_cov;
    double depth = 0.0;
    Eigen::Vector3d color;
    double opacity = 0.0;
    double radius = 0.0; // pixels where alpha >= cutoff lie within this radius
};

Eigen::Matrix2d floor_eigenvalues(const Eigen::Matrix2d& cov) {
    const double a = cov(0, 0), b = cov(0, 1), c = cov(1, 1);
    const double mid = 0.5 * (a + c);
    const double disc = std::sqrt(std::max(0.25 * (a - c) * (a - c) + b * b, 0.0));
    const double lmin = mid - disc;
    if (lmin >= kEigenFloor) return cov;
    // Rare path: clamp eigenvalues and rebuild.
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    Eigen::Vector2d vals = es.eigenvalues().cwiseMax(kEigenFloor);
    return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

// Perspective Jacobian d(pixel)/d(camera point) for upper-triangular K with
// K(2,2) = 1.
Eigen::Matrix<double, 2, 3> perspective_jacobian(const Eigen::Matrix3d& K,
                                                 const Eigen::Vector3d& pc) {
    const double x = pc.x(), y = pc.y(), z = pc.z();
    Eigen::Matrix<double, 2, 3> J;
    J(0, 0) = K(0, 0) / z;
    J(0, 1) = K(0, 1) / z;
    J(0, 2) = -(K(0, 0) * x + K(0, 1) * y) / (z * z);
    J(1, 0) = 0.0;
    J(1, 1) = K(1, 1) / z;
    J(1, 2) = -K(1, 1) * y / (z * z);
    return J;
}

double max_eigenvalue(const Eigen::Matrix2d& cov) {
    const double a = cov(0, 0), b = cov(0, 1), c = cov(1, 1);
    return 0.5 * (a + c) + std::sqrt(std::max(0.25 * (a - c) * (a - c) + b * b, 0.0));
}

// Project and depth-sort the scene. Splats behind the camera never reach the
// image and are dropped; with a positive cutoff, splats whose opacity cannot
// reach it are dropped as well.
std::vector<Prepared> prepare_scene(std::span<const GaussianPrimitive> scene,
                                    const geometry::Camera& cam, double alpha_cutoff) {
    std::vector<Prepared> out;
    out.reserve(scene.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const GaussianPrimitive& g = scene[i];
        const Eigen::Vector3d pc = cam.R * g.p + cam.t;
        if (pc.z() <= 0.0) continue;
        Prepared sp;
        sp.index = static_cast<int>(i);
        const Eigen::Vector3d h = cam.K * pc;
        sp.mean = {h.x() / h.z(), h.y() / h.z()};
        sp.depth = pc.z();
        const Eigen::Matrix<double, 2, 3> A = perspective_jacobian(cam.K, pc) * cam.R;
        sp.cov = A * covariance3d(g.r, g.s) * A.transpose();
        sp.cov += kCovDilation * Eigen::Matrix2d::Identity();
        sp.cov = floor_eigenvalues(sp.cov);
        sp.inv_cov = sp.cov.inverse();
        sp.color = g.c;
        sp.opacity = g.sigma;
        if (alpha_cutoff > 0.0) {
            if (sp.opacity <= alpha_cutoff) continue;
            sp.radius = std::sqrt(2.0 * std::log(sp.opacity / alpha_cutoff) *
                                  max_eigenvalue(sp.cov));
        } else {
            sp.radius = std::numeric_limits<double>::infinity();
        }
        out.push_back(sp);
    }
    std::sort(out.begin(), out.end(), [](const Prepared& a, const Prepared& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.index < b.index;
    });
    return out;
}

struct PixelResult {
    Eigen::Vector3d color;
    double weight_sum;
    double transmittance;
};

template <typename SplatRange>
PixelResult composite_pixel(double px, double py, const SplatRange& splats, double alpha_cutoff,
                            double transmit_stop, const Eigen::Vector3d& background) {
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double transmittance = 1.0;
    double weight_sum = 0.0;
    for (const Prepared* sp : splats) {
        const Eigen::Vector2d d(px - sp->mean.x(), py - sp->mean.y());
        const double q = d.dot(sp->inv_cov * d);
        const double alpha = sp->opacity * std::exp(-0.5 * q);
        if (alpha < alpha_cutoff) continue;
        const double w = alpha * transmittance;
        color += w * sp->color;
        weight_sum += w;
        transmittance -= w;
        if (transmittance < transmit_stop) break;
    }
    color += transmittance * background;
    return {color.cwiseMax(0.0).cwiseMin(1.0), weight_sum, transmittance};
}

void init_stats(RenderStats* stats, int width, int height) {
    if (!stats) return;
    stats->width = width;
    stats->height = height;
    stats->weight_sum.assign(static_cast<std::size_t>(width) * height, 0.0);
    stats->transmittance.assign(static_cast<std::size_t>(width) * height, 1.0);
}

}  // namespace

Eigen::Matrix3d quat_to_rotation(const Eigen::Vector4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

Eigen::Matrix3d covariance3d(const Eigen::Vector4d& r, const Eigen::Vector3d& s) {
    const Eigen::Matrix3d rot = quat_to_rotation(r.normalized());
    return rot * s.cwiseProduct(s).asDiagonal() * rot.transpose();
}

Splat2D project_gaussian(const geometry::Camera& cam, const GaussianPrimitive& g) {
    const Eigen::Vector3d pc = cam.R * g.p + cam.t;
    if (pc.z() <= 0.0) {
        throw BehindCamera("gaussian mean at camera depth " + std::to_string(pc.z()));
    }
    Splat2D splat;
    const Eigen::Vector3d h = cam.K * pc;
    splat.mean2d = {h.x() / h.z(), h.y() / h.z()};
    splat.depth = pc.z();
    const Eigen::Matrix<double, 2, 3> A = perspective_jacobian(cam.K, pc) * cam.R;
    splat.cov2d = A * covariance3d(g.r, g.s) * A.transpose();
    splat.cov2d += kCovDilation * Eigen::Matrix2d::Identity();
    splat.cov2d = floor_eigenvalues(splat.cov2d);
    splat.color = g.c;
    splat.opacity = g.sigma;
    return splat;
}

RenderedImage rasterize(std::span<const GaussianPrimitive> scene, const geometry::Camera& cam,
                        const RenderOptions& options, RenderStats* stats) {
    const int W = cam.width, H = cam.height;
    RenderedImage out{Image(W, H), options.background};
    init_stats(stats, W, H);

    const std::vector<Prepared> prepared = prepare_scene(scene, cam, options.alpha_cutoff);

    const int ts = options.tile_size;
    const int tiles_x = (W + ts - 1) / ts;
    const int tiles_y = (H + ts - 1) / ts;
    const int tile_count = tiles_x * tiles_y;

#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < tile_count; ++tile) {
        const int tx = tile % tiles_x, ty = tile / tiles_x;
        const int x0 = tx * ts, x1 = std::min(x0 + ts, W) - 1;
        const int y0 = ty * ts, y1 = std::min(y0 + ts, H) - 1;

        // Depth-ordered splats whose cutoff disk may reach this tile.
        std::vector<const Prepared*> local;
        local.reserve(prepared.size());
        for (const Prepared& sp : prepared) {
            if (sp.mean.x() + sp.radius < x0 || sp.mean.x() - sp.radius > x1 ||
                sp.mean.y() + sp.radius < y0 || sp.mean.y() - sp.radius > y1) {
                continue;
            }
            local.push_back(&sp);
        }

        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const PixelResult r = composite_pixel(x, y, local, options.alpha_cutoff,
                                                      options.transmit_stop, options.background);
                out.pixels.set_pixel(x, y, r.color);
                if (stats) {
                    stats->weight_sum[static_cast<std::size_t>(y) * W + x] = r.weight_sum;
                    stats->transmittance[static_cast<std::size_t>(y) * W + x] = r.transmittance;
                }
            }
        }
    }
    return out;
}

RenderedImage rasterize_reference(std::span<const GaussianPrimitive> scene,
                                  const geometry::Camera& cam, const Eigen::Vector3d& background,
                                  RenderStats* stats) {
    const int W = cam.width, H = cam.height;
    RenderedImage out{Image(W, H), background};
    init_stats(stats, W, H);

    const std::vector<Prepared> prepared = prepare_scene(scene, cam, 0.0);
    std::vector<const Prepared*> all;
    all.reserve(prepared.size());
    for (const Prepared& sp : prepared) all.push_back(&sp);

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const PixelResult r = composite_pixel(x, y, all, 0.0, 0.0, background);
            out.pixels.set_pixel(x, y, r.color);
            if (stats) {
                stats->weight_sum[static_cast<std::size_t>(y) * W + x] = r.weight_sum;
                stats->transmittance[static_cast<std::size_t>(y) * W + x] = r.transmittance;
            }
        }
    }
    return out;
}

namespace {

struct Grad2D {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Vector3d cov = Eigen::Vector3d::Zero(); // d(a, b, c) of [[a,b],[b,c]]
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double sigma = 0.0;
};

struct Contribution {
    const Prepared* splat;
    double alpha;
    double gauss; // exp(-q/2)
    double transmittance; // at composite time
    Eigen::Vector2d offset; // pixel - mean
};

// Chain per-splat 2D gradients back to the primitive parameters.
GaussianGrads chain_to_3d(const GaussianPrimitive& g, const geometry::Camera& cam,
                          const Grad2D& g2) {
    GaussianGrads out;
    out.dc = g2.color;
    out.dsigma = g2.sigma;

    const Eigen::Vector3d pc = cam.R * g.p + cam.t;
    const double x = pc.x(), y = pc.y(), z = pc.z();
    const Eigen::Matrix<double, 2, 3> J = perspective_jacobian(cam.K, pc);
    const Eigen::Matrix<double, 2, 3> A = J * cam.R;

    const Eigen::Vector4d q_hat = g.r.normalized();
    const Eigen::Matrix3d rot = quat_to_rotation(q_hat);
    const Eigen::Matrix3d D = g.s.cwiseProduct(g.s).asDiagonal();
    const Eigen::Matrix3d sigma3 = rot * D * rot.transpose();

    Eigen::Matrix2d G;
    G << g2.cov[0], 0.5 * g2.cov[1], 0.5 * g2.cov[1], g2.cov[2];

    // cov2d = A sigma3 A^T (+ const): propagate through both factors.
    const Eigen::Matrix<double, 2, 3> dA = 2.0 * G * A * sigma3;
    const Eigen::Matrix3d dSigma3 = A.transpose() * G * A;

    // Through sigma3 = rot D rot^T.
    const Eigen::Matrix3d dD = rot.transpose() * dSigma3 * rot;
    for (int k = 0; k < 3; ++k) out.ds[k] = dD(k, k) * 2.0 * g.s[k];
    const Eigen::Matrix3d dRot = 2.0 * dSigma3 * rot * D;

    const double qw = q_hat[0], qx = q_hat[1], qy = q_hat[2], qz = q_hat[3];
    Eigen::Matrix3d dR_dq[4];
    dR_dq[0] << 0, -2 * qz, 2 * qy, 2 * qz, 0, -2 * qx, -2 * qy, 2 * qx, 0;
    dR_dq[1] << 0, 2 * qy, 2 * qz, 2 * qy, -4 * qx, -2 * qw, 2 * qz, 2 * qw, -4 * qx;
    dR_dq[2] << -4 * qy, 2 * qx, 2 * qw, 2 * qx, 0, 2 * qz, -2 * qw, 2 * qz, -4 * qy;
    dR_dq[3] << -4 * qz, -2 * qw, 2 * qx, 2 * qw, -4 * qz, 2 * qy, 2 * qx, 2 * qy, 0;
    Eigen::Vector4d dq_hat;
    for (int k = 0; k < 4; ++k) dq_hat[k] = (dRot.array() * dR_dq[k].array()).sum();
    // Through the normalization q_hat = r / |r|.
    const double norm = g.r.norm();
    out.dr = (dq_hat - q_hat * q_hat.dot(dq_hat)) / norm;

    // Mean gradient plus the covariance dependence on the camera point
    // through the Jacobian J.
    const Eigen::Matrix<double, 2, 3> dJ = dA * cam.R.transpose();
    Eigen::Vector3d d_pc = J.transpose() * g2.mean;
    const double z2 = z * z, z3 = z2 * z;
    const double k00 = cam.K(0, 0), k01 = cam.K(0, 1), k11 = cam.K(1, 1);
    // dJ/dx
    d_pc.x() += dJ(0, 2) * (-k00 / z2);
    // dJ/dy
    d_pc.y() += dJ(0, 2) * (-k01 / z2) + dJ(1, 2) * (-k11 / z2);
    // dJ/dz
    d_pc.z() += dJ(0, 0) * (-k00 / z2) + dJ(0, 1) * (-k01 / z2) +
                dJ(0, 2) * (2.0 * (k00 * x + k01 * y) / z3) + dJ(1, 1) * (-k11 / z2) +
                dJ(1, 2) * (2.0 * k11 * y / z3);
    out.dp = cam.R.transpose() * d_pc;
    return out;
}

}  // namespace

std::vector<GaussianGrads> rasterize_backward(std::span<const GaussianPrimitive> scene,
                                              const geometry::Camera& cam, const Image& dL_dI,
                                              const RenderOptions& options) {
    const int W = cam.width, H = cam.height;
    if (dL_dI.width != W || dL_dI.height != H) {
        throw ShapeMismatch("rasterize_backward: dL_dI shape does not match the camera image");
    }

    const std::vector<Prepared> prepared = prepare_scene(scene, cam, options.alpha_cutoff);
    const int ts = options.tile_size;
    const int tiles_x = (W + ts - 1) / ts;
    const int tiles_y = (H + ts - 1) / ts;
    const int tile_count = tiles_x * tiles_y;

    // Per-tile partial gradients, reduced in fixed tile order afterwards.
    std::vector<std::vector<std::pair<int, Grad2D>>> tile_partials(tile_count);

#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < tile_count; ++tile) {
        const int tx = tile % tiles_x, ty = tile / tiles_x;
        const int x0 = tx * ts, x1 = std::min(x0 + ts, W) - 1;
        const int y0 = ty * ts, y1 = std::min(y0 + ts, H) - 1;

        std::vector<const Prepared*> local;
        std::vector<int> local_slot(prepared.size(), -1);
        for (std::size_t i = 0; i < prepared.size(); ++i) {
            const Prepared& sp = prepared[i];
            if (sp.mean.x() + sp.radius < x0 || sp.mean.x() - sp.radius > x1 ||
                sp.mean.y() + sp.radius < y0 || sp.mean.y() - sp.radius > y1) {
                continue;
            }
            local_slot[i] = static_cast<int>(local.size());
            local.push_back(&sp);
        }
        if (local.empty()) continue;

        std::vector<Grad2D> grads(local.size());
        std::vector<Contribution> contribs;
        contribs.reserve(local.size());

        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const Eigen::Vector3d dl = dL_dI.pixel(x, y);
                contribs.clear();

                // Forward sweep with the exact forward masks.
                double transmittance = 1.0;
                for (const Prepared* sp : local) {
                    const Eigen::Vector2d d(x - sp->mean.x(), y - sp->mean.y());
                    const double q = d.dot(sp->inv_cov * d);
                    const double gauss = std::exp(-0.5 * q);
                    const double alpha = sp->opacity * gauss;
                    if (alpha < options.alpha_cutoff) continue;
                    contribs.push_back({sp, alpha, gauss, transmittance, d});
                    transmittance -= alpha * transmittance;
                    if (transmittance < options.transmit_stop) break;
                }

                // Back-to-front: rest = what composites behind splat i,
                // before attenuation by (1 - alpha_i).
                Eigen::Vector3d rest = options.background;
                for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                    const Prepared* sp = it->splat;
                    Grad2D& acc = grads[local_slot[static_cast<std::size_t>(
                        std::distance(prepared.data(), sp))]];

                    const double dalpha = dl.dot(it->transmittance * (sp->color - rest));
                    acc.color += dl * (it->alpha * it->transmittance);
                    acc.sigma += dalpha * it->gauss;

                    const double dq = -0.5 * dalpha * it->alpha;
                    const Eigen::Vector2d u = sp->inv_cov * it->offset;
                    acc.mean += dq * (-2.0 * u);
                    acc.cov[0] += dq * (-u.x() * u.x());
                    acc.cov[1] += dq * (-2.0 * u.x() * u.y());
                    acc.cov[2] += dq * (-u.y() * u.y());

                    rest = sp->color * it->alpha + (1.0 - it->alpha) * rest;
                }
            }
        }

        auto& partial = tile_partials[tile];
        for (std::size_t slot = 0; slot < local.size(); ++slot) {
            partial.emplace_back(static_cast<int>(std::distance(
                                     prepared.data(), local[slot])),
                                 grads[slot]);
        }
    }

    // Deterministic reduction: tiles in index order.
    std::vector<Grad2D> total(prepared.size());
    for (int tile = 0; tile < tile_count; ++tile) {
        for (const auto& [pidx, grad] : tile_partials[tile]) {
            Grad2D& acc = total[pidx];
            acc.mean += grad.mean;
            acc.cov += grad.cov;
            acc.color += grad.color;
            acc.sigma += grad.sigma;
        }
    }

    std::vector<GaussianGrads> out(scene.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < prepared.size(); ++i) {
        const Prepared& sp = prepared[i];
        out[sp.index] = chain_to_3d(scene[sp.index], cam, total[i]);
    }
    return out;
}

}  // namespace splatsim::render
