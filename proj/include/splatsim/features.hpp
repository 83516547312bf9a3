// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "splatsim/gauss_render.hpp"
#include "splatsim/geometry.hpp"
#include "splatsim/image.hpp"
#include "splatsim/rng.hpp"

namespace splatsim::features {

/// Simulator state element: position plus the invariant/dynamic latent
/// split. Frozen particles attend as input but are excluded from position
/// updates.
struct ParticleState {
    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    Eigen::VectorXd f_inv;
    Eigen::VectorXd f_dyn;
    bool frozen = false;

    Eigen::VectorXd feature() const {
        Eigen::VectorXd f(f_inv.size() + f_dyn.size());
        f << f_inv, f_dyn;
        return f;
    }
};

double gelu(double x);
Eigen::VectorXd gelu(const Eigen::VectorXd& v);

/// Elementwise scale * h + bias.
Eigen::VectorXd film_apply(const Eigen::VectorXd& h, const Eigen::VectorXd& scale,
                           const Eigen::VectorXd& bias);

/// FiLM-conditioned transform of pixel-aligned features into
/// view-independent latents. The conditioning input is the 5-vector context
/// (depth, density, pixel shift, validity) concatenated with the Plucker
/// ray (moment | direction).
struct FilmNetwork {
    Eigen::MatrixXd trunk_in_w;  // hidden x in_dim
    Eigen::VectorXd trunk_in_b;
    Eigen::MatrixXd cond1_w;     // cond_hidden x 11
    Eigen::VectorXd cond1_b;
    Eigen::MatrixXd cond2_w;     // 2*hidden x cond_hidden
    Eigen::VectorXd cond2_b;
    Eigen::MatrixXd trunk_out_w; // out_dim x hidden
    Eigen::VectorXd trunk_out_b;

    int in_dim() const { return static_cast<int>(trunk_in_w.cols()); }
    int hidden_dim() const { return static_cast<int>(trunk_in_w.rows()); }
    int out_dim() const { return static_cast<int>(trunk_out_w.rows()); }

    static FilmNetwork zeros(int in_dim, int hidden, int out_dim, int cond_hidden = 10);
    static FilmNetwork seeded(int in_dim, int hidden, int out_dim, std::uint64_t seed,
                              int cond_hidden = 10);
};

inline constexpr int kContextDim = 5; // depth, density, shift x/y, validity

Eigen::VectorXd encode_view_independent(const Eigen::VectorXd& f_pixel,
                                        const Eigen::VectorXd& context,
                                        const geometry::PluckerRay& ray,
                                        const FilmNetwork& net);

/// Learned per-timestep vectors added to working features before merging.
struct TimestepEmbeddingTable {
    Eigen::MatrixXd rows; // T_max x d

    static TimestepEmbeddingTable zeros(int t_max, int dim);
    static TimestepEmbeddingTable seeded(int t_max, int dim, std::uint64_t seed);
};

/// f + E[k]. Throws IndexOutOfRange for k outside the table.
Eigen::VectorXd temporal_embed(const Eigen::VectorXd& f, int k,
                               const TimestepEmbeddingTable& table);

/// Keep particles that project into the foreground (mask > 127) of at
/// least one view; particles behind every camera are dropped.
std::vector<ParticleState> mask_filter(const std::vector<ParticleState>& particles,
                                       const std::vector<GrayImage>& masks,
                                       const std::vector<geometry::Camera>& cams);

/// Per-particle map (p, f) -> splat parameters. The position passes through
/// as the splat mean; activations keep outputs inside the primitive
/// invariants (sigmoid color/opacity, softplus scales, normalized rotation).
struct GaussianHead {
    Eigen::MatrixXd w1; // hidden x d
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2; // 11 x hidden
    Eigen::VectorXd b2;
    double scale_gain = 0.01; // meters per softplus unit

    int in_dim() const { return static_cast<int>(w1.cols()); }

    static GaussianHead zeros(int d, int hidden = 128);
    static GaussianHead seeded(int d, std::uint64_t seed, int hidden = 128);
};

render::GaussianPrimitive to_gaussian(const ParticleState& state, const GaussianHead& head);
std::vector<render::GaussianPrimitive> to_gaussians(std::span<const ParticleState> states,
                                                    const GaussianHead& head);

}  // namespace splatsim::features
