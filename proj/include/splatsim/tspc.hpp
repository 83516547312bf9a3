// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "splatsim/errors.hpp"
#include "splatsim/sfc.hpp"

namespace splatsim::tspc {

/// Bit layout of the 64-bit serialization code [batch | time | space],
/// batch most significant.
struct CodeLayout {
    int tau_bits = 0;    // time field width
    int kappa_bits = 48; // space field width

    int batch_bits() const { return 64 - tau_bits - kappa_bits; }

    /// tau = ceil(log2(T)) for a trajectory of T frames.
    static CodeLayout for_length(int frame_count);

    void validate() const;
};

struct CodeFields {
    std::uint64_t batch = 0, time = 0, space = 0;
};

/// value = (b << (tau+kappa)) | (t << kappa) | s. Throws FieldOverflow
/// naming the offending field.
std::uint64_t pack_code(std::uint64_t batch, std::uint64_t time, std::uint64_t space,
                        const CodeLayout& layout);
CodeFields unpack_code(std::uint64_t code, const CodeLayout& layout);

/// Right-shifts the time field; batch and space bits are untouched.
std::uint64_t merge_code(std::uint64_t code, const CodeLayout& layout, int shifts = 1);

/// A sorted spatio-temporal point cloud. Entries are ordered by code with
/// ties broken by full-precision position (lexicographic), then by the
/// original flat index, which makes the ordering deterministic and, for
/// generic inputs, independent of input permutation.
struct SerializedCloud {
    std::vector<std::uint64_t> codes;       // ascending
    std::vector<int> perm;                  // sorted slot -> original flat index
    std::vector<int> frame_of;              // sorted slot -> source timestep
    std::vector<Eigen::Vector3d> positions; // sorted order

    int size() const { return static_cast<int>(codes.size()); }
};

/// Serialize T frames of positions under one batch index. Flat input index
/// of particle i in frame k is (offset of frame k) + i.
SerializedCloud serialize_cloud(const std::vector<std::vector<Eigen::Vector3d>>& frames,
                                std::uint64_t batch, const sfc::GridSpec& spec,
                                const sfc::SfcPattern& pattern, const CodeLayout& layout);

/// Merge the time field of every entry and re-sort with the standard
/// tie-break rule.
SerializedCloud temporal_merge(const SerializedCloud& cloud, const CodeLayout& layout,
                               int shifts = 1);

/// Fixed-size patches over the sorted order. The final short patch is
/// left-padded by borrowing the tail of the preceding patch; a lone short
/// patch repeats its own last entry.
struct PatchPlan {
    int patch_size = 0;
    std::vector<std::vector<int>> patches;       // each exactly patch_size slots
    std::vector<std::vector<std::uint8_t>> pad_mask; // 1 = borrowed/padded slot

    int padded_count() const;
};

PatchPlan patch_group(int cloud_size, int patch_size);
PatchPlan patch_group(const SerializedCloud& cloud, int patch_size);

struct PoolResult {
    SerializedCloud cloud;
    Eigen::MatrixXd features;    // parent rows, componentwise max of children
    std::vector<int> parent_map; // child slot -> parent slot
};

/// Pool children sharing (batch, t >> log2(temporal_stride), coarse cell at
/// spatial_stride x current cell size). Parent position is the mean of its
/// children; parent code is re-encoded at the coarse resolution. Strides of
/// 1/1 are an identity pooling.
PoolResult grid_pool(const SerializedCloud& cloud, const Eigen::MatrixXd& features,
                     int spatial_stride, int temporal_stride, const sfc::GridSpec& spec,
                     const CodeLayout& layout, const sfc::SfcPattern& pattern);

/// child feature = [parent feature broadcast via parent_map | skip feature].
Eigen::MatrixXd grid_unpool(const Eigen::MatrixXd& pooled_features,
                            const std::vector<int>& parent_map,
                            const Eigen::MatrixXd& skip_features);

/// Per-stage pooled state of the U-Net encoder.
struct HierarchyStage {
    SerializedCloud cloud;
    Eigen::MatrixXd features;
    std::vector<int> parent_map; // children of the previous stage -> this stage
};
using CloudHierarchy = std::vector<HierarchyStage>;

}  // namespace splatsim::tspc
