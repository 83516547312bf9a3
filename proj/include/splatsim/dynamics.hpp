// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "splatsim/features.hpp"
#include "splatsim/rng.hpp"
#include "splatsim/sfc.hpp"
#include "splatsim/tspc.hpp"

namespace splatsim::dynamics {

/// Architecture of the spatio-temporal U-Net transformer. Encoder arrays
/// share one length; decoder arrays have one entry less. A shorter dec_dims
/// list is left-padded by repeating its first entry.
struct DynamicsConfig {
    std::vector<int> encoder_depths{2, 2, 2, 6, 2};
    std::vector<int> decoder_depths{2, 2, 2, 2};
    std::vector<int> pool_strides{1, 4, 2, 2, 2};
    std::vector<int> temporal_strides{1, 2, 2, 2, 2};
    int patch_size = 1024;
    std::vector<int> enc_dims{32, 64, 128, 256, 512};
    std::vector<int> dec_dims{64, 128, 256};
    std::vector<int> enc_heads{2, 4, 8, 16, 32};
    std::vector<int> dec_heads{4, 4, 8, 16};
    double grid_size = 0.004;
    std::vector<std::string> pattern_cycle{"z", "zt", "h", "ht"};
    int d_inv = 16;
    int d_dyn = 32;
    int t_max = 16; // embedding table rows; upper bound on trajectory length
    std::optional<Eigen::Vector3d> grid_origin; // default: first-frame bbox rule

    int stages() const { return static_cast<int>(encoder_depths.size()); }
    std::vector<int> padded_dec_dims() const;
    sfc::SfcPattern pattern(int stage_index) const;
    void validate() const;
};

struct AttentionBlockWeights {
    Eigen::VectorXd ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    Eigen::MatrixXd wq, wk, wv, wo; // d x d, applied as x * W^T
    Eigen::VectorXd bq, bk, bv, bo;
    Eigen::MatrixXd ffn1, ffn2; // (4d x d), (d x 4d)
    Eigen::VectorXd ffn1_b, ffn2_b;

    static AttentionBlockWeights zeros(int dim);
    static AttentionBlockWeights seeded(int dim, Rng& rng);
};

/// 3x3x3 submanifold convolution taps over occupied voxels. Tap index is
/// (dx+1)*9 + (dy+1)*3 + (dz+1) for the neighbor displacement (dx, dy, dz).
struct XcpeWeights {
    std::vector<Eigen::MatrixXd> taps; // 27 matrices, each dim x dim

    static XcpeWeights zeros(int dim);
    static XcpeWeights seeded(int dim, Rng& rng);
};

struct EncoderStageWeights {
    Eigen::MatrixXd proj_w; // stage dim x previous dim (stage 0: input embed)
    Eigen::VectorXd proj_b;
    Eigen::MatrixXd embed; // t_max x dim timestep embedding table
    XcpeWeights xcpe;
    std::vector<AttentionBlockWeights> blocks;
};

struct DecoderStageWeights {
    Eigen::MatrixXd proj_w; // stage dim x (parent dim + skip dim)
    Eigen::VectorXd proj_b;
    XcpeWeights xcpe;
    std::vector<AttentionBlockWeights> blocks;
};

struct DynamicsWeights {
    std::vector<EncoderStageWeights> encoder;
    std::vector<DecoderStageWeights> decoder; // index d = resolution of encoder stage d
    Eigen::MatrixXd head_w1, head_w2, head_w3; // 128 x dec0, 128 x 128, (3+d_dyn) x 128
    Eigen::VectorXd head_b1, head_b2, head_b3;

    static DynamicsWeights zeros(const DynamicsConfig& cfg);
    static DynamicsWeights seeded(const DynamicsConfig& cfg, std::uint64_t seed);

    /// Checks every shape against the config; throws ShapeMismatch.
    void validate(const DynamicsConfig& cfg) const;
};

/// Per-particle deltas for the last input frame, rows in that frame's
/// original particle order. delta_p rows are zero for frozen particles.
struct StepOutput {
    Eigen::MatrixXd delta_p;     // N_last x 3
    Eigen::MatrixXd delta_f_dyn; // N_last x d_dyn
};

/// One serialized spatio-temporal snapshot inside the U-Net.
struct SerializedState {
    std::vector<std::uint64_t> codes;        // sorted ascending
    std::vector<Eigen::Vector3d> positions;
    Eigen::MatrixXd features;                // rows aligned with codes
    std::vector<int> frame_of;               // original timestep per row
    std::vector<int> source;                 // stable unique id per row
    tspc::PatchPlan patches;
};

/// Pre-norm multi-head self attention + residual, then feed-forward +
/// residual, over one patch of tokens (rows).
Eigen::MatrixXd attention_patch(const Eigen::MatrixXd& tokens, const AttentionBlockWeights& w,
                                int heads);

/// Sparse conditional positional encoding: per-voxel mean features gathered
/// over the 27-neighborhood (within the same batch/time group), pushed
/// through the taps, plus the input as a skip connection.
Eigen::MatrixXd xcpe(const std::vector<Eigen::Vector3d>& positions,
                     const std::vector<std::uint64_t>& codes, const Eigen::MatrixXd& features,
                     const XcpeWeights& weights, const sfc::GridSpec& spec,
                     const tspc::CodeLayout& layout);

/// Temporal encoding and merging: add the timestep embedding indexed by each
/// row's current time code, right-shift the time fields, re-sort, re-patch.
/// `old_to_new`, when given, receives the row permutation.
SerializedState tem_block(const SerializedState& state, const tspc::CodeLayout& layout,
                          const Eigen::MatrixXd& embed_table, int shifts, int patch_size,
                          std::vector<int>* old_to_new = nullptr);

/// Optional per-stage introspection of a forward pass.
struct ForwardTrace {
    struct Stage {
        double voxel_size = 0.0;
        int cumulative_time_shift = 0;
        int rows = 0;
        std::vector<std::uint64_t> codes;
    };
    std::vector<Stage> encoder;
};

/// Deterministic one-step forward pass of the full U-Net.
StepOutput forward(const std::vector<std::vector<features::ParticleState>>& frames,
                   const DynamicsConfig& cfg, const DynamicsWeights& weights,
                   ForwardTrace* trace = nullptr);

/// Autoregressive rollout: apply forward, update the last frame's particles
/// (p += delta_p except frozen, f_dyn += delta_f_dyn, f_inv untouched),
/// slide the window, repeat.
std::vector<std::vector<features::ParticleState>> rollout(
    const std::vector<std::vector<features::ParticleState>>& frames, int steps,
    const DynamicsConfig& cfg, const DynamicsWeights& weights);

}  // namespace splatsim::dynamics
