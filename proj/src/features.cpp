// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#include "splatsim/features.hpp"

#include <cmath>

namespace splatsim::features {

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, Rng& rng, double stddev = 0.02) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
    }
    return m;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) {
    // Overflow-safe log(1 + e^x).
    return x > 30.0 ? x : std::log1p(std::exp(x));
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

Eigen::VectorXd gelu(const Eigen::VectorXd& v) {
    return v.unaryExpr([](double x) { return gelu(x); });
}

Eigen::VectorXd film_apply(const Eigen::VectorXd& h, const Eigen::VectorXd& scale,
                           const Eigen::VectorXd& bias) {
    if (scale.size() != h.size() || bias.size() != h.size()) {
        throw ShapeMismatch("film_apply: scale/bias size " + std::to_string(scale.size()) + "/" +
                            std::to_string(bias.size()) + " != hidden size " +
                            std::to_string(h.size()));
    }
    return scale.cwiseProduct(h) + bias;
}

FilmNetwork FilmNetwork::zeros(int in_dim, int hidden, int out_dim, int cond_hidden) {
    FilmNetwork net;
    net.trunk_in_w = Eigen::MatrixXd::Zero(hidden, in_dim);
    net.trunk_in_b = Eigen::VectorXd::Zero(hidden);
    net.cond1_w = Eigen::MatrixXd::Zero(cond_hidden, kContextDim + 6);
    net.cond1_b = Eigen::VectorXd::Zero(cond_hidden);
    net.cond2_w = Eigen::MatrixXd::Zero(2 * hidden, cond_hidden);
    net.cond2_b = Eigen::VectorXd::Zero(2 * hidden);
    net.trunk_out_w = Eigen::MatrixXd::Zero(out_dim, hidden);
    net.trunk_out_b = Eigen::VectorXd::Zero(out_dim);
    return net;
}

FilmNetwork FilmNetwork::seeded(int in_dim, int hidden, int out_dim, std::uint64_t seed,
                                int cond_hidden) {
    Rng rng(seed);
    FilmNetwork net = zeros(in_dim, hidden, out_dim, cond_hidden);
    net.trunk_in_w = random_matrix(hidden, in_dim, rng);
    net.cond1_w = random_matrix(cond_hidden, kContextDim + 6, rng);
    net.cond2_w = random_matrix(2 * hidden, cond_hidden, rng);
    net.trunk_out_w = random_matrix(out_dim, hidden, rng);
    return net;
}

Eigen::VectorXd encode_view_independent(const Eigen::VectorXd& f_pixel,
                                        const Eigen::VectorXd& context,
                                        const geometry::PluckerRay& ray,
                                        const FilmNetwork& net) {
    if (f_pixel.size() != net.in_dim()) {
        throw ShapeMismatch("encode_view_independent: pixel feature size " +
                            std::to_string(f_pixel.size()) + " != " + std::to_string(net.in_dim()));
    }
    if (context.size() != kContextDim) {
        throw ShapeMismatch("encode_view_independent: context must have " +
                            std::to_string(kContextDim) + " entries");
    }
    Eigen::VectorXd cond_in(kContextDim + 6);
    cond_in << context, ray.moment, ray.direction;

    const Eigen::VectorXd c = gelu(net.cond1_w * cond_in + net.cond1_b);
    const Eigen::VectorXd sb = net.cond2_w * c + net.cond2_b;
    const int hidden = net.hidden_dim();
    const Eigen::VectorXd scale = sb.head(hidden);
    const Eigen::VectorXd bias = sb.tail(hidden);

    const Eigen::VectorXd h = net.trunk_in_w * f_pixel + net.trunk_in_b;
    const Eigen::VectorXd modulated = gelu(film_apply(h, scale, bias));
    return net.trunk_out_w * modulated + net.trunk_out_b;
}

TimestepEmbeddingTable TimestepEmbeddingTable::zeros(int t_max, int dim) {
    return {Eigen::MatrixXd::Zero(t_max, dim)};
}

TimestepEmbeddingTable TimestepEmbeddingTable::seeded(int t_max, int dim, std::uint64_t seed) {
    Rng rng(seed);
    return {random_matrix(t_max, dim, rng)};
}

Eigen::VectorXd temporal_embed(const Eigen::VectorXd& f, int k,
                               const TimestepEmbeddingTable& table) {
    if (k < 0 || k >= table.rows.rows()) {
        throw IndexOutOfRange("temporal_embed: timestep " + std::to_string(k) +
                              " outside table of " + std::to_string(table.rows.rows()) + " rows");
    }
    if (f.size() != table.rows.cols()) {
        throw ShapeMismatch("temporal_embed: feature size " + std::to_string(f.size()) +
                            " != table width " + std::to_string(table.rows.cols()));
    }
    return f + table.rows.row(k).transpose();
}

std::vector<ParticleState> mask_filter(const std::vector<ParticleState>& particles,
                                       const std::vector<GrayImage>& masks,
                                       const std::vector<geometry::Camera>& cams) {
    if (masks.size() != cams.size()) {
        throw ShapeMismatch("mask_filter: " + std::to_string(masks.size()) + " masks for " +
                            std::to_string(cams.size()) + " cameras");
    }
    for (std::size_t v = 0; v < masks.size(); ++v) {
        if (masks[v].width != cams[v].width || masks[v].height != cams[v].height) {
            throw ShapeMismatch("mask_filter: mask " + std::to_string(v) +
                                " does not match its camera image size");
        }
    }

    std::vector<ParticleState> kept;
    kept.reserve(particles.size());
    for (const ParticleState& ps : particles) {
        bool foreground = false;
        for (std::size_t v = 0; v < cams.size() && !foreground; ++v) {
            try {
                const geometry::Projection proj = project(cams[v], ps.p);
                const int px = static_cast<int>(std::lround(proj.pixel.x()));
                const int py = static_cast<int>(std::lround(proj.pixel.y()));
                if (px < 0 || px >= masks[v].width || py < 0 || py >= masks[v].height) continue;
                foreground = masks[v].at(px, py) > 127;
            } catch (const BehindCamera&) {
            }
        }
        if (foreground) kept.push_back(ps);
    }
    return kept;
}

GaussianHead GaussianHead::zeros(int d, int hidden) {
    GaussianHead head;
    head.w1 = Eigen::MatrixXd::Zero(hidden, d);
    head.b1 = Eigen::VectorXd::Zero(hidden);
    head.w2 = Eigen::MatrixXd::Zero(11, hidden);
    head.b2 = Eigen::VectorXd::Zero(11);
    return head;
}

GaussianHead GaussianHead::seeded(int d, std::uint64_t seed, int hidden) {
    Rng rng(seed);
    GaussianHead head = zeros(d, hidden);
    head.w1 = random_matrix(hidden, d, rng);
    head.w2 = random_matrix(11, hidden, rng);
    return head;
}

render::GaussianPrimitive to_gaussian(const ParticleState& state, const GaussianHead& head) {
    const Eigen::VectorXd f = state.feature();
    if (f.size() != head.in_dim()) {
        throw ShapeMismatch("gaussian head expects feature size " +
                            std::to_string(head.in_dim()) + ", got " + std::to_string(f.size()));
    }
    const Eigen::VectorXd h = gelu(head.w1 * f + head.b1);
    const Eigen::VectorXd raw = head.w2 * h + head.b2;

    render::GaussianPrimitive g;
    g.p = state.p;
    for (int i = 0; i < 3; ++i) g.c[i] = sigmoid(raw[i]);
    // Identity offset keeps the zero-weight rotation at the default axis.
    const Eigen::Vector4d q = raw.segment<4>(3) + Eigen::Vector4d(1, 0, 0, 0);
    g.r = q.normalized();
    for (int i = 0; i < 3; ++i) g.s[i] = head.scale_gain * softplus(raw[7 + i]);
    g.sigma = sigmoid(raw[10]);
    return g;
}

std::vector<render::GaussianPrimitive> to_gaussians(std::span<const ParticleState> states,
                                                    const GaussianHead& head) {
    for (const ParticleState& s : states) {
        if (s.f_inv.size() + s.f_dyn.size() != head.in_dim()) {
            throw ShapeMismatch("gaussian head expects feature size " +
                                std::to_string(head.in_dim()) + ", got " +
                                std::to_string(s.f_inv.size() + s.f_dyn.size()));
        }
    }
    std::vector<render::GaussianPrimitive> out(states.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < states.size(); ++i) out[i] = to_gaussian(states[i], head);
    return out;
}

}  // namespace splatsim::features
