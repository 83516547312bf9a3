// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#include "splatsim/tspc.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <unordered_map>

namespace splatsim::tspc {

namespace {

inline std::uint64_t mask_bits(int n) {
    return n >= 64 ? ~0ull : ((1ull << n) - 1ull);
}

inline int log2_exact(int v, const char* what) {
    if (v < 1 || (v & (v - 1)) != 0) {
        throw std::invalid_argument(std::string(what) + " must be a power of two >= 1, got " +
                                    std::to_string(v));
    }
    return std::countr_zero(static_cast<unsigned>(v));
}

// Sort slots by (code, position lexicographic, original flat index).
struct SlotOrder {
    const std::vector<std::uint64_t>& codes;
    const std::vector<Eigen::Vector3d>& pos;
    const std::vector<int>& orig;

    bool operator()(int a, int b) const {
        if (codes[a] != codes[b]) return codes[a] < codes[b];
        for (int i = 0; i < 3; ++i) {
            if (pos[a][i] != pos[b][i]) return pos[a][i] < pos[b][i];
        }
        return orig[a] < orig[b];
    }
};

}  // namespace

CodeLayout CodeLayout::for_length(int frame_count) {
    if (frame_count < 1) throw std::invalid_argument("trajectory must have at least one frame");
    int tau = 0;
    while ((1 << tau) < frame_count) ++tau;
    CodeLayout layout;
    layout.tau_bits = tau;
    layout.validate();
    return layout;
}

void CodeLayout::validate() const {
    if (tau_bits < 0 || kappa_bits < 0 || tau_bits + kappa_bits > 64) {
        throw std::invalid_argument("code layout fields exceed 64 bits");
    }
}

std::uint64_t pack_code(std::uint64_t batch, std::uint64_t time, std::uint64_t space,
                        const CodeLayout& layout) {
    layout.validate();
    if (batch > mask_bits(layout.batch_bits())) {
        throw FieldOverflow("batch field overflow: " + std::to_string(batch) + " needs more than " +
                            std::to_string(layout.batch_bits()) + " bits");
    }
    if (time > mask_bits(layout.tau_bits)) {
        throw FieldOverflow("time field overflow: " + std::to_string(time) + " needs more than " +
                            std::to_string(layout.tau_bits) + " bits");
    }
    if (space > mask_bits(layout.kappa_bits)) {
        throw FieldOverflow("space field overflow: " + std::to_string(space) +
                            " needs more than " + std::to_string(layout.kappa_bits) + " bits");
    }
    return (batch << (layout.tau_bits + layout.kappa_bits)) | (time << layout.kappa_bits) | space;
}

CodeFields unpack_code(std::uint64_t code, const CodeLayout& layout) {
    layout.validate();
    CodeFields f;
    f.space = code & mask_bits(layout.kappa_bits);
    f.time = (code >> layout.kappa_bits) & mask_bits(layout.tau_bits);
    const int shift = layout.tau_bits + layout.kappa_bits;
    f.batch = shift >= 64 ? 0 : (code >> shift);
    return f;
}

std::uint64_t merge_code(std::uint64_t code, const CodeLayout& layout, int shifts) {
    CodeFields f = unpack_code(code, layout);
    f.time >>= shifts;
    return pack_code(f.batch, f.time, f.space, layout);
}

SerializedCloud serialize_cloud(const std::vector<std::vector<Eigen::Vector3d>>& frames,
                                std::uint64_t batch, const sfc::GridSpec& spec,
                                const sfc::SfcPattern& pattern, const CodeLayout& layout) {
    layout.validate();
    const int frame_count = static_cast<int>(frames.size());
    if (frame_count > 0 &&
        static_cast<std::uint64_t>(frame_count - 1) > mask_bits(layout.tau_bits)) {
        throw FieldOverflow("time field overflow: " + std::to_string(frame_count) +
                            " frames need more than " + std::to_string(layout.tau_bits) + " bits");
    }

    int total = 0;
    for (const auto& f : frames) total += static_cast<int>(f.size());

    SerializedCloud cloud;
    cloud.codes.resize(total);
    cloud.frame_of.resize(total);
    cloud.positions.resize(total);
    std::vector<int> frame_offset(frames.size() + 1, 0);
    for (std::size_t k = 0; k < frames.size(); ++k) {
        frame_offset[k + 1] = frame_offset[k] + static_cast<int>(frames[k].size());
    }

    // Exceptions may not escape an OpenMP region; capture the first one.
    std::exception_ptr encode_error;
#pragma omp parallel for schedule(static)
    for (int k = 0; k < frame_count; ++k) {
        try {
            for (std::size_t i = 0; i < frames[k].size(); ++i) {
                const int flat = frame_offset[k] + static_cast<int>(i);
                const std::uint64_t s = sfc::sfc_encode(frames[k][i], spec, pattern);
                cloud.codes[flat] = pack_code(batch, static_cast<std::uint64_t>(k), s, layout);
                cloud.frame_of[flat] = k;
                cloud.positions[flat] = frames[k][i];
            }
        } catch (...) {
#pragma omp critical
            if (!encode_error) encode_error = std::current_exception();
        }
    }
    if (encode_error) std::rethrow_exception(encode_error);

    std::vector<int> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> flat_index = order;
    std::sort(order.begin(), order.end(), SlotOrder{cloud.codes, cloud.positions, flat_index});

    SerializedCloud out;
    out.codes.resize(total);
    out.perm.resize(total);
    out.frame_of.resize(total);
    out.positions.resize(total);
    for (int slot = 0; slot < total; ++slot) {
        const int src = order[slot];
        out.codes[slot] = cloud.codes[src];
        out.perm[slot] = src;
        out.frame_of[slot] = cloud.frame_of[src];
        out.positions[slot] = cloud.positions[src];
    }
    return out;
}

SerializedCloud temporal_merge(const SerializedCloud& cloud, const CodeLayout& layout,
                               int shifts) {
    const int n = cloud.size();
    std::vector<std::uint64_t> merged(n);
    for (int i = 0; i < n; ++i) merged[i] = merge_code(cloud.codes[i], layout, shifts);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), SlotOrder{merged, cloud.positions, cloud.perm});

    SerializedCloud out;
    out.codes.resize(n);
    out.perm.resize(n);
    out.frame_of.resize(n);
    out.positions.resize(n);
    for (int slot = 0; slot < n; ++slot) {
        const int src = order[slot];
        out.codes[slot] = merged[src];
        out.perm[slot] = cloud.perm[src];
        out.frame_of[slot] = cloud.frame_of[src];
        out.positions[slot] = cloud.positions[src];
    }
    return out;
}

int PatchPlan::padded_count() const {
    int n = 0;
    for (const auto& mask : pad_mask) {
        for (auto m : mask) n += m ? 1 : 0;
    }
    return n;
}

PatchPlan patch_group(int cloud_size, int patch_size) {
    if (cloud_size <= 0) throw std::invalid_argument("patch_group: empty cloud");
    if (patch_size <= 0) throw std::invalid_argument("patch_group: patch size must be positive");

    PatchPlan plan;
    plan.patch_size = patch_size;
    const int patch_count = (cloud_size + patch_size - 1) / patch_size;
    plan.patches.resize(patch_count);
    plan.pad_mask.resize(patch_count);

    for (int p = 0; p < patch_count; ++p) {
        plan.patches[p].resize(patch_size);
        plan.pad_mask[p].assign(patch_size, 0);
    }

    for (int p = 0; p + 1 < patch_count; ++p) {
        for (int s = 0; s < patch_size; ++s) plan.patches[p][s] = p * patch_size + s;
    }

    const int last = patch_count - 1;
    const int real_start = last * patch_size;
    const int real_count = cloud_size - real_start;
    const int pad = patch_size - real_count;
    if (patch_count == 1) {
        // Lone short patch: repeat its own last entry at the tail.
        for (int s = 0; s < real_count; ++s) plan.patches[0][s] = s;
        for (int s = real_count; s < patch_size; ++s) {
            plan.patches[0][s] = cloud_size - 1;
            plan.pad_mask[0][s] = 1;
        }
    } else {
        for (int s = 0; s < pad; ++s) {
            plan.patches[last][s] = real_start - pad + s; // tail of the preceding patch
            plan.pad_mask[last][s] = 1;
        }
        for (int s = 0; s < real_count; ++s) plan.patches[last][pad + s] = real_start + s;
    }
    return plan;
}

PatchPlan patch_group(const SerializedCloud& cloud, int patch_size) {
    return patch_group(cloud.size(), patch_size);
}

PoolResult grid_pool(const SerializedCloud& cloud, const Eigen::MatrixXd& features,
                     int spatial_stride, int temporal_stride, const sfc::GridSpec& spec,
                     const CodeLayout& layout, const sfc::SfcPattern& pattern) {
    const int n = cloud.size();
    if (features.rows() != n) {
        throw ShapeMismatch("grid_pool: feature rows " + std::to_string(features.rows()) +
                            " != cloud size " + std::to_string(n));
    }
    const int s_shift = log2_exact(spatial_stride, "spatial stride");
    const int t_shift = log2_exact(temporal_stride, "temporal stride");

    if (s_shift == 0 && t_shift == 0) {
        PoolResult out;
        out.cloud = cloud;
        out.features = features;
        out.parent_map.resize(n);
        std::iota(out.parent_map.begin(), out.parent_map.end(), 0);
        return out;
    }

    struct Group {
        Eigen::Vector3d pos_sum = Eigen::Vector3d::Zero();
        int count = 0;
        Eigen::VectorXd feat_max;
        std::uint64_t code = 0;
        int any_frame = 0;
        int first_child = 0;
    };

    // Key: (batch, merged time, coarse cell) packed exactly like a serial
    // code at the coarse resolution, which is unique per group.
    std::unordered_map<std::uint64_t, int> group_of;
    std::vector<Group> groups;
    std::vector<int> parent_pre(n);
    group_of.reserve(static_cast<std::size_t>(n));

    for (int i = 0; i < n; ++i) {
        const CodeFields f = unpack_code(cloud.codes[i], layout);
        const sfc::GridCoord g = sfc::quantize(cloud.positions[i], spec);
        const sfc::GridCoord coarse{static_cast<std::uint16_t>(g.x >> s_shift),
                                    static_cast<std::uint16_t>(g.y >> s_shift),
                                    static_cast<std::uint16_t>(g.z >> s_shift)};
        const std::uint64_t t_merged = f.time >> t_shift;
        const std::uint64_t code =
            pack_code(f.batch, t_merged, sfc::sfc_encode_coord(coarse, pattern), layout);

        auto [it, inserted] = group_of.try_emplace(code, static_cast<int>(groups.size()));
        if (inserted) {
            Group grp;
            grp.feat_max = features.row(i).transpose();
            grp.code = code;
            grp.any_frame = static_cast<int>(t_merged);
            grp.first_child = i;
            groups.push_back(std::move(grp));
        }
        Group& grp = groups[it->second];
        grp.pos_sum += cloud.positions[i];
        grp.count += 1;
        if (!inserted) grp.feat_max = grp.feat_max.cwiseMax(features.row(i).transpose());
        parent_pre[i] = it->second;
    }

    const int m = static_cast<int>(groups.size());
    std::vector<Eigen::Vector3d> parent_pos(m);
    std::vector<std::uint64_t> parent_codes(m);
    std::vector<int> parent_first(m);
    for (int j = 0; j < m; ++j) {
        parent_pos[j] = groups[j].pos_sum / groups[j].count;
        parent_codes[j] = groups[j].code;
        parent_first[j] = groups[j].first_child;
    }

    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), SlotOrder{parent_codes, parent_pos, parent_first});
    std::vector<int> new_slot(m);
    for (int slot = 0; slot < m; ++slot) new_slot[order[slot]] = slot;

    PoolResult out;
    out.cloud.codes.resize(m);
    out.cloud.perm.resize(m);
    out.cloud.frame_of.resize(m);
    out.cloud.positions.resize(m);
    out.features.resize(m, features.cols());
    out.parent_map.resize(n);
    for (int slot = 0; slot < m; ++slot) {
        const int j = order[slot];
        out.cloud.codes[slot] = parent_codes[j];
        out.cloud.perm[slot] = j;
        out.cloud.frame_of[slot] = groups[j].any_frame;
        out.cloud.positions[slot] = parent_pos[j];
        out.features.row(slot) = groups[j].feat_max.transpose();
    }
    for (int i = 0; i < n; ++i) out.parent_map[i] = new_slot[parent_pre[i]];
    return out;
}

Eigen::MatrixXd grid_unpool(const Eigen::MatrixXd& pooled_features,
                            const std::vector<int>& parent_map,
                            const Eigen::MatrixXd& skip_features) {
    const int n = static_cast<int>(parent_map.size());
    if (skip_features.rows() != n) {
        throw ShapeMismatch("grid_unpool: skip rows " + std::to_string(skip_features.rows()) +
                            " != parent_map size " + std::to_string(n));
    }
    for (int i = 0; i < n; ++i) {
        if (parent_map[i] < 0 || parent_map[i] >= pooled_features.rows()) {
            throw ShapeMismatch("grid_unpool: parent index " + std::to_string(parent_map[i]) +
                                " outside pooled rows");
        }
    }
    Eigen::MatrixXd out(n, pooled_features.cols() + skip_features.cols());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        out.row(i) << pooled_features.row(parent_map[i]), skip_features.row(i);
    }
    return out;
}

}  // namespace splatsim::tspc
