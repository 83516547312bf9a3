// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#include "splatsim/dynamics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace splatsim::dynamics {

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, Rng& rng, double stddev = 0.02) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
    }
    return m;
}

int log2_stride(int v) { return std::countr_zero(static_cast<unsigned>(v)); }

void check_power_of_two(const std::vector<int>& v, const char* what) {
    for (int s : v) {
        if (s < 1 || (s & (s - 1)) != 0) {
            throw std::invalid_argument(std::string(what) + " entries must be powers of two >= 1");
        }
    }
}

void check_shape(bool ok, const std::string& what) {
    if (!ok) throw ShapeMismatch("dynamics weights: bad shape for " + what);
}

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& gamma,
                           const Eigen::VectorXd& beta) {
    constexpr double eps = 1e-5;
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        out.row(i) = (((x.row(i).array() - mean) / std::sqrt(var + eps)) *
                          gamma.transpose().array() +
                      beta.transpose().array())
                         .matrix();
    }
    return out;
}

Eigen::MatrixXd gelu_rows(Eigen::MatrixXd x) {
    return x.unaryExpr([](double v) { return features::gelu(v); });
}

}  // namespace

std::vector<int> DynamicsConfig::padded_dec_dims() const {
    const int n = stages() - 1;
    if (static_cast<int>(dec_dims.size()) > n) {
        throw std::invalid_argument("dec_dims longer than decoder stage count");
    }
    std::vector<int> out(n);
    const int pad = n - static_cast<int>(dec_dims.size());
    for (int i = 0; i < n; ++i) out[i] = i < pad ? dec_dims.front() : dec_dims[i - pad];
    return out;
}

sfc::SfcPattern DynamicsConfig::pattern(int stage_index) const {
    return sfc::SfcPattern::parse(pattern_cycle[stage_index % pattern_cycle.size()]);
}

void DynamicsConfig::validate() const {
    const int s = stages();
    if (s < 1) throw std::invalid_argument("encoder must have at least one stage");
    if (static_cast<int>(pool_strides.size()) != s ||
        static_cast<int>(temporal_strides.size()) != s ||
        static_cast<int>(enc_dims.size()) != s || static_cast<int>(enc_heads.size()) != s) {
        throw std::invalid_argument("encoder config arrays must share one length");
    }
    if (static_cast<int>(decoder_depths.size()) != s - 1 ||
        static_cast<int>(dec_heads.size()) != s - 1) {
        throw std::invalid_argument("decoder config arrays must have one entry per pooling stage");
    }
    if (dec_dims.empty() && s > 1) throw std::invalid_argument("dec_dims must not be empty");
    check_power_of_two(pool_strides, "pool_strides");
    check_power_of_two(temporal_strides, "temporal_strides");
    for (int j = 0; j < s; ++j) {
        if (enc_dims[j] % enc_heads[j] != 0) {
            throw std::invalid_argument("enc_dims must be divisible by enc_heads");
        }
    }
    const std::vector<int> dd = padded_dec_dims();
    for (int j = 0; j < s - 1; ++j) {
        if (dd[j] % dec_heads[j] != 0) {
            throw std::invalid_argument("dec_dims must be divisible by dec_heads");
        }
    }
    if (patch_size < 1) throw std::invalid_argument("patch_size must be positive");
    if (grid_size <= 0.0) throw std::invalid_argument("grid_size must be positive");
    if (t_max < 1) throw std::invalid_argument("t_max must be positive");
    if (d_inv < 0 || d_dyn < 1) throw std::invalid_argument("bad feature split dims");
    if (pattern_cycle.empty()) throw std::invalid_argument("pattern_cycle must not be empty");
    for (const auto& p : pattern_cycle) sfc::SfcPattern::parse(p);
}

AttentionBlockWeights AttentionBlockWeights::zeros(int dim) {
    AttentionBlockWeights w;
    w.ln1_gamma = Eigen::VectorXd::Ones(dim);
    w.ln1_beta = Eigen::VectorXd::Zero(dim);
    w.ln2_gamma = Eigen::VectorXd::Ones(dim);
    w.ln2_beta = Eigen::VectorXd::Zero(dim);
    w.wq = Eigen::MatrixXd::Zero(dim, dim);
    w.wk = Eigen::MatrixXd::Zero(dim, dim);
    w.wv = Eigen::MatrixXd::Zero(dim, dim);
    w.wo = Eigen::MatrixXd::Zero(dim, dim);
    w.bq = Eigen::VectorXd::Zero(dim);
    w.bk = Eigen::VectorXd::Zero(dim);
    w.bv = Eigen::VectorXd::Zero(dim);
    w.bo = Eigen::VectorXd::Zero(dim);
    w.ffn1 = Eigen::MatrixXd::Zero(4 * dim, dim);
    w.ffn1_b = Eigen::VectorXd::Zero(4 * dim);
    w.ffn2 = Eigen::MatrixXd::Zero(dim, 4 * dim);
    w.ffn2_b = Eigen::VectorXd::Zero(dim);
    return w;
}

AttentionBlockWeights AttentionBlockWeights::seeded(int dim, Rng& rng) {
    AttentionBlockWeights w = zeros(dim);
    w.wq = random_matrix(dim, dim, rng);
    w.wk = random_matrix(dim, dim, rng);
    w.wv = random_matrix(dim, dim, rng);
    w.wo = random_matrix(dim, dim, rng);
    w.ffn1 = random_matrix(4 * dim, dim, rng);
    w.ffn2 = random_matrix(dim, 4 * dim, rng);
    return w;
}

XcpeWeights XcpeWeights::zeros(int dim) {
    XcpeWeights w;
    w.taps.assign(27, Eigen::MatrixXd::Zero(dim, dim));
    return w;
}

XcpeWeights XcpeWeights::seeded(int dim, Rng& rng) {
    XcpeWeights w;
    w.taps.reserve(27);
    for (int t = 0; t < 27; ++t) w.taps.push_back(random_matrix(dim, dim, rng));
    return w;
}

DynamicsWeights DynamicsWeights::zeros(const DynamicsConfig& cfg) {
    cfg.validate();
    DynamicsWeights w;
    const int s = cfg.stages();
    const int d_in = cfg.d_inv + cfg.d_dyn;
    w.encoder.resize(s);
    for (int j = 0; j < s; ++j) {
        const int dim = cfg.enc_dims[j];
        const int prev = j == 0 ? d_in : cfg.enc_dims[j - 1];
        auto& st = w.encoder[j];
        st.proj_w = Eigen::MatrixXd::Zero(dim, prev);
        st.proj_b = Eigen::VectorXd::Zero(dim);
        st.embed = Eigen::MatrixXd::Zero(cfg.t_max, dim);
        st.xcpe = XcpeWeights::zeros(dim);
        st.blocks.assign(cfg.encoder_depths[j], AttentionBlockWeights::zeros(dim));
    }
    const std::vector<int> dd = cfg.padded_dec_dims();
    w.decoder.resize(s - 1);
    for (int d = s - 2; d >= 0; --d) {
        const int dim = dd[d];
        const int parent_dim = d == s - 2 ? cfg.enc_dims[s - 1] : dd[d + 1];
        auto& st = w.decoder[d];
        st.proj_w = Eigen::MatrixXd::Zero(dim, parent_dim + cfg.enc_dims[d]);
        st.proj_b = Eigen::VectorXd::Zero(dim);
        st.xcpe = XcpeWeights::zeros(dim);
        st.blocks.assign(cfg.decoder_depths[d], AttentionBlockWeights::zeros(dim));
    }
    const int dec0 = s > 1 ? dd[0] : cfg.enc_dims[0];
    w.head_w1 = Eigen::MatrixXd::Zero(128, dec0);
    w.head_b1 = Eigen::VectorXd::Zero(128);
    w.head_w2 = Eigen::MatrixXd::Zero(128, 128);
    w.head_b2 = Eigen::VectorXd::Zero(128);
    w.head_w3 = Eigen::MatrixXd::Zero(3 + cfg.d_dyn, 128);
    w.head_b3 = Eigen::VectorXd::Zero(3 + cfg.d_dyn);
    return w;
}

DynamicsWeights DynamicsWeights::seeded(const DynamicsConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    DynamicsWeights w = zeros(cfg);
    for (auto& st : w.encoder) {
        st.proj_w = random_matrix(st.proj_w.rows(), st.proj_w.cols(), rng);
        st.embed = random_matrix(st.embed.rows(), st.embed.cols(), rng);
        st.xcpe = XcpeWeights::seeded(static_cast<int>(st.proj_w.rows()), rng);
        for (auto& b : st.blocks) b = AttentionBlockWeights::seeded(static_cast<int>(st.proj_w.rows()), rng);
    }
    for (auto& st : w.decoder) {
        st.proj_w = random_matrix(st.proj_w.rows(), st.proj_w.cols(), rng);
        st.xcpe = XcpeWeights::seeded(static_cast<int>(st.proj_w.rows()), rng);
        for (auto& b : st.blocks) b = AttentionBlockWeights::seeded(static_cast<int>(st.proj_w.rows()), rng);
    }
    w.head_w1 = random_matrix(w.head_w1.rows(), w.head_w1.cols(), rng);
    w.head_w2 = random_matrix(w.head_w2.rows(), w.head_w2.cols(), rng);
    w.head_w3 = random_matrix(w.head_w3.rows(), w.head_w3.cols(), rng);
    return w;
}

void DynamicsWeights::validate(const DynamicsConfig& cfg) const {
    const int s = cfg.stages();
    check_shape(static_cast<int>(encoder.size()) == s, "encoder stage count");
    const int d_in = cfg.d_inv + cfg.d_dyn;
    for (int j = 0; j < s; ++j) {
        const int dim = cfg.enc_dims[j];
        const int prev = j == 0 ? d_in : cfg.enc_dims[j - 1];
        const auto& st = encoder[j];
        check_shape(st.proj_w.rows() == dim && st.proj_w.cols() == prev, "encoder projection");
        check_shape(st.proj_b.size() == dim, "encoder projection bias");
        check_shape(st.embed.rows() >= cfg.t_max && st.embed.cols() == dim, "embedding table");
        check_shape(static_cast<int>(st.xcpe.taps.size()) == 27, "xcpe tap count");
        for (const auto& t : st.xcpe.taps) {
            check_shape(t.rows() == dim && t.cols() == dim, "xcpe tap");
        }
        check_shape(static_cast<int>(st.blocks.size()) == cfg.encoder_depths[j],
                    "encoder block count");
        for (const auto& b : st.blocks) {
            check_shape(b.wq.rows() == dim && b.wq.cols() == dim && b.ffn1.rows() == 4 * dim &&
                            b.ffn1.cols() == dim && b.ffn2.rows() == dim && b.ffn2.cols() == 4 * dim,
                        "attention block");
        }
    }
    const std::vector<int> dd = cfg.padded_dec_dims();
    check_shape(static_cast<int>(decoder.size()) == s - 1, "decoder stage count");
    for (int d = 0; d < s - 1; ++d) {
        const int dim = dd[d];
        const int parent_dim = d == s - 2 ? cfg.enc_dims[s - 1] : dd[d + 1];
        const auto& st = decoder[d];
        check_shape(st.proj_w.rows() == dim && st.proj_w.cols() == parent_dim + cfg.enc_dims[d],
                    "decoder projection");
        check_shape(static_cast<int>(st.blocks.size()) == cfg.decoder_depths[d],
                    "decoder block count");
    }
    const int dec0 = s > 1 ? dd[0] : cfg.enc_dims[0];
    check_shape(head_w1.cols() == dec0 && head_w2.rows() == head_w1.rows() &&
                    head_w2.cols() == head_w1.rows() && head_w3.cols() == head_w2.rows() &&
                    head_w3.rows() == 3 + cfg.d_dyn,
                "head");
}

Eigen::MatrixXd attention_patch(const Eigen::MatrixXd& tokens, const AttentionBlockWeights& w,
                                int heads) {
    const int n = static_cast<int>(tokens.rows());
    const int dim = static_cast<int>(tokens.cols());
    if (w.wq.cols() != dim) {
        throw ShapeMismatch("attention_patch: token dim " + std::to_string(dim) +
                            " != weight dim " + std::to_string(w.wq.cols()));
    }
    if (heads < 1 || dim % heads != 0) {
        throw ShapeMismatch("attention_patch: dim " + std::to_string(dim) +
                            " not divisible by head count " + std::to_string(heads));
    }
    const int hd = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    const Eigen::MatrixXd normed = layer_norm(tokens, w.ln1_gamma, w.ln1_beta);
    const Eigen::MatrixXd q = (normed * w.wq.transpose()).rowwise() + w.bq.transpose();
    const Eigen::MatrixXd k = (normed * w.wk.transpose()).rowwise() + w.bk.transpose();
    const Eigen::MatrixXd v = (normed * w.wv.transpose()).rowwise() + w.bv.transpose();

    Eigen::MatrixXd attended(n, dim);
    for (int h = 0; h < heads; ++h) {
        const auto qh = q.middleCols(h * hd, hd);
        const auto kh = k.middleCols(h * hd, hd);
        const auto vh = v.middleCols(h * hd, hd);
        Eigen::MatrixXd scores = qh * kh.transpose() * scale;
        for (int i = 0; i < n; ++i) {
            const double m = scores.row(i).maxCoeff();
            Eigen::ArrayXd e = (scores.row(i).array() - m).exp();
            scores.row(i) = (e / e.sum()).matrix();
        }
        attended.middleCols(h * hd, hd) = scores * vh;
    }

    const Eigen::MatrixXd after_attn =
        tokens + ((attended * w.wo.transpose()).rowwise() + w.bo.transpose());

    const Eigen::MatrixXd normed2 = layer_norm(after_attn, w.ln2_gamma, w.ln2_beta);
    const Eigen::MatrixXd hidden =
        gelu_rows((normed2 * w.ffn1.transpose()).rowwise() + w.ffn1_b.transpose());
    return after_attn + ((hidden * w.ffn2.transpose()).rowwise() + w.ffn2_b.transpose());
}

Eigen::MatrixXd xcpe(const std::vector<Eigen::Vector3d>& positions,
                     const std::vector<std::uint64_t>& codes, const Eigen::MatrixXd& features,
                     const XcpeWeights& weights, const sfc::GridSpec& spec,
                     const tspc::CodeLayout& layout) {
    const int n = static_cast<int>(positions.size());
    const int dim = static_cast<int>(features.cols());
    if (static_cast<int>(codes.size()) != n || features.rows() != n) {
        throw ShapeMismatch("xcpe: positions/codes/features row mismatch");
    }
    if (static_cast<int>(weights.taps.size()) != 27 || weights.taps[0].rows() != dim ||
        weights.taps[0].cols() != dim) {
        throw ShapeMismatch("xcpe: tap shapes do not match feature dim");
    }

    // Voxel key: (batch, merged time, cell), packed as a serial code at the
    // current resolution. Neighborhoods never cross batch/time groups.
    auto voxel_key = [&](std::uint64_t code, sfc::GridCoord g) {
        const tspc::CodeFields f = tspc::unpack_code(code, layout);
        return tspc::pack_code(f.batch, f.time, sfc::morton_encode(g), layout);
    };

    std::vector<sfc::GridCoord> cell(n);
    for (int i = 0; i < n; ++i) cell[i] = sfc::quantize(positions[i], spec);

    struct VoxelAgg {
        Eigen::VectorXd sum;
        int count = 0;
    };
    std::unordered_map<std::uint64_t, int> voxel_of;
    std::vector<VoxelAgg> agg;
    std::vector<std::uint64_t> voxel_code_of_point(n);
    std::vector<sfc::GridCoord> voxel_cell;
    std::vector<std::uint64_t> voxel_src_code;
    for (int i = 0; i < n; ++i) {
        const std::uint64_t key = voxel_key(codes[i], cell[i]);
        voxel_code_of_point[i] = key;
        auto [it, inserted] = voxel_of.try_emplace(key, static_cast<int>(agg.size()));
        if (inserted) {
            agg.push_back({Eigen::VectorXd::Zero(dim), 0});
            voxel_cell.push_back(cell[i]);
            voxel_src_code.push_back(codes[i]);
        }
        agg[it->second].sum += features.row(i).transpose();
        agg[it->second].count += 1;
    }

    const int voxel_count = static_cast<int>(agg.size());
    Eigen::MatrixXd voxel_mean(voxel_count, dim);
    for (int v = 0; v < voxel_count; ++v) {
        voxel_mean.row(v) = (agg[v].sum / agg[v].count).transpose();
    }

    // Convolution output per occupied voxel.
    Eigen::MatrixXd voxel_out = Eigen::MatrixXd::Zero(voxel_count, dim);
#pragma omp parallel for schedule(static)
    for (int v = 0; v < voxel_count; ++v) {
        const sfc::GridCoord base = voxel_cell[v];
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
        for (int dx = -1; dx <= 1; ++dx) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dz = -1; dz <= 1; ++dz) {
                    const int nx = static_cast<int>(base.x) + dx;
                    const int ny = static_cast<int>(base.y) + dy;
                    const int nz = static_cast<int>(base.z) + dz;
                    if (nx < 0 || ny < 0 || nz < 0 || nx > 0xFFFF || ny > 0xFFFF || nz > 0xFFFF) {
                        continue;
                    }
                    const sfc::GridCoord ng{static_cast<std::uint16_t>(nx),
                                            static_cast<std::uint16_t>(ny),
                                            static_cast<std::uint16_t>(nz)};
                    const auto it = voxel_of.find(voxel_key(voxel_src_code[v], ng));
                    if (it == voxel_of.end()) continue;
                    const int tap = (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1);
                    acc.noalias() += weights.taps[tap] * voxel_mean.row(it->second).transpose();
                }
            }
        }
        voxel_out.row(v) = acc.transpose();
    }

    Eigen::MatrixXd out(n, dim);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        out.row(i) = features.row(i) + voxel_out.row(voxel_of.at(voxel_code_of_point[i]));
    }
    return out;
}

namespace {

struct SlotOrder {
    const std::vector<std::uint64_t>& codes;
    const std::vector<Eigen::Vector3d>& pos;
    const std::vector<int>& source;

    bool operator()(int a, int b) const {
        if (codes[a] != codes[b]) return codes[a] < codes[b];
        for (int i = 0; i < 3; ++i) {
            if (pos[a][i] != pos[b][i]) return pos[a][i] < pos[b][i];
        }
        return source[a] < source[b];
    }
};

// Permute every row-aligned array of the state; returns old->new slots.
std::vector<int> apply_order(SerializedState& st, const std::vector<int>& order) {
    const int n = static_cast<int>(order.size());
    SerializedState next;
    next.codes.resize(n);
    next.positions.resize(n);
    next.features.resize(n, st.features.cols());
    next.frame_of.resize(n);
    next.source.resize(n);
    std::vector<int> old_to_new(n);
    for (int slot = 0; slot < n; ++slot) {
        const int src = order[slot];
        next.codes[slot] = st.codes[src];
        next.positions[slot] = st.positions[src];
        next.features.row(slot) = st.features.row(src);
        next.frame_of[slot] = st.frame_of[src];
        next.source[slot] = st.source[src];
        old_to_new[src] = slot;
    }
    next.patches = st.patches;
    st = std::move(next);
    return old_to_new;
}

std::vector<int> sort_state(SerializedState& st) {
    std::vector<int> order(st.codes.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), SlotOrder{st.codes, st.positions, st.source});
    return apply_order(st, order);
}

void apply_attention_blocks(SerializedState& st, const std::vector<AttentionBlockWeights>& blocks,
                            int heads) {
    const int patch_count = static_cast<int>(st.patches.patches.size());
    const int psz = st.patches.patch_size;
    for (const auto& block : blocks) {
        Eigen::MatrixXd next = st.features;
#pragma omp parallel for schedule(dynamic)
        for (int p = 0; p < patch_count; ++p) {
            Eigen::MatrixXd tokens(psz, st.features.cols());
            for (int s = 0; s < psz; ++s) tokens.row(s) = st.features.row(st.patches.patches[p][s]);
            const Eigen::MatrixXd out = attention_patch(tokens, block, heads);
            for (int s = 0; s < psz; ++s) {
                if (!st.patches.pad_mask[p][s]) next.row(st.patches.patches[p][s]) = out.row(s);
            }
        }
        st.features = std::move(next);
    }
}

}  // namespace

SerializedState tem_block(const SerializedState& state, const tspc::CodeLayout& layout,
                          const Eigen::MatrixXd& embed_table, int shifts, int patch_size,
                          std::vector<int>* old_to_new) {
    const int n = static_cast<int>(state.codes.size());
    if (state.features.rows() != n) throw ShapeMismatch("tem_block: feature rows != state rows");
    if (embed_table.cols() != state.features.cols()) {
        throw ShapeMismatch("tem_block: embedding width " + std::to_string(embed_table.cols()) +
                            " != feature dim " + std::to_string(state.features.cols()));
    }

    SerializedState out = state;
    for (int i = 0; i < n; ++i) {
        const auto t = static_cast<Eigen::Index>(tspc::unpack_code(out.codes[i], layout).time);
        if (t >= embed_table.rows()) {
            throw IndexOutOfRange("tem_block: time code " + std::to_string(t) +
                                  " outside embedding table of " +
                                  std::to_string(embed_table.rows()) + " rows");
        }
        out.features.row(i) += embed_table.row(t);
        out.codes[i] = tspc::merge_code(out.codes[i], layout, shifts);
    }
    std::vector<int> o2n = sort_state(out);
    out.patches = tspc::patch_group(n, patch_size);
    if (old_to_new) *old_to_new = std::move(o2n);
    return out;
}

namespace {

struct StageRecord {
    SerializedState state;        // output of the stage (skip source)
    std::vector<int> parent_map;  // previous-stage rows -> current rows of this stage
    sfc::GridSpec spec;
    int cumulative_shift = 0;
};

tspc::SerializedCloud to_cloud(const SerializedState& st) {
    tspc::SerializedCloud cloud;
    cloud.codes = st.codes;
    cloud.perm = st.source;
    cloud.frame_of = st.frame_of;
    cloud.positions = st.positions;
    return cloud;
}

}  // namespace

StepOutput forward(const std::vector<std::vector<features::ParticleState>>& frames,
                   const DynamicsConfig& cfg, const DynamicsWeights& weights,
                   ForwardTrace* trace) {
    cfg.validate();
    weights.validate(cfg);
    const int frame_count = static_cast<int>(frames.size());
    if (frame_count < 1) throw std::invalid_argument("forward: need at least one frame");
    if (frame_count > cfg.t_max) {
        throw IndexOutOfRange("forward: " + std::to_string(frame_count) +
                              " frames exceed t_max = " + std::to_string(cfg.t_max));
    }
    const tspc::CodeLayout layout = tspc::CodeLayout::for_length(frame_count);
    const int d_in = cfg.d_inv + cfg.d_dyn;

    std::vector<std::vector<Eigen::Vector3d>> positions(frames.size());
    std::vector<int> frame_offset(frames.size() + 1, 0);
    for (std::size_t k = 0; k < frames.size(); ++k) {
        positions[k].reserve(frames[k].size());
        for (const auto& ps : frames[k]) {
            if (ps.f_inv.size() != cfg.d_inv || ps.f_dyn.size() != cfg.d_dyn) {
                throw ShapeMismatch("forward: particle feature split does not match config");
            }
            positions[k].push_back(ps.p);
        }
        frame_offset[k + 1] = frame_offset[k] + static_cast<int>(frames[k].size());
    }
    const int total = frame_offset.back();
    if (total == 0) throw std::invalid_argument("forward: empty particle cloud");

    // Grid origin: explicit config, else first-frame bounding box minus one
    // cell.
    sfc::GridSpec base_spec;
    if (cfg.grid_origin) {
        base_spec.grid_size_m = cfg.grid_size;
        base_spec.origin_m = *cfg.grid_origin;
    } else {
        base_spec = sfc::GridSpec::fit(positions[0], cfg.grid_size);
    }

    const tspc::SerializedCloud sc =
        tspc::serialize_cloud(positions, 0, base_spec, cfg.pattern(0), layout);

    SerializedState cur;
    cur.codes = sc.codes;
    cur.positions = sc.positions;
    cur.frame_of = sc.frame_of;
    cur.source = sc.perm;
    cur.features.resize(total, cfg.enc_dims[0]);
    {
        // Gather raw features in sorted order, then the input embedding.
        Eigen::MatrixXd raw(total, d_in);
        for (int slot = 0; slot < total; ++slot) {
            const int flat = sc.perm[slot];
            int k = sc.frame_of[slot];
            const int i = flat - frame_offset[k];
            raw.row(slot) << frames[k][i].f_inv.transpose(), frames[k][i].f_dyn.transpose();
        }
        cur.features = (raw * weights.encoder[0].proj_w.transpose()).rowwise() +
                       weights.encoder[0].proj_b.transpose();
    }
    cur.patches = tspc::patch_group(total, cfg.patch_size);

    const int stage_count = cfg.stages();
    std::vector<StageRecord> recs(stage_count);
    int cum_shift = 0;
    double cell_size = cfg.grid_size;

    for (int j = 0; j < stage_count; ++j) {
        sfc::GridSpec stage_spec = base_spec;
        if (j > 0) {
            // Spatial pooling into this stage's resolution. Time groups are
            // already at the current merged granularity.
            sfc::GridSpec prev_spec = base_spec;
            prev_spec.grid_size_m = cell_size;
            const tspc::PoolResult pooled =
                tspc::grid_pool(to_cloud(cur), cur.features, cfg.pool_strides[j], 1, prev_spec,
                                layout, cfg.pattern(j));
            recs[j].parent_map = pooled.parent_map;

            SerializedState next;
            next.codes = pooled.cloud.codes;
            next.positions = pooled.cloud.positions;
            next.frame_of = pooled.cloud.frame_of;
            next.source = pooled.cloud.perm;
            next.features = (pooled.features * weights.encoder[j].proj_w.transpose()).rowwise() +
                            weights.encoder[j].proj_b.transpose();
            next.patches = tspc::patch_group(static_cast<int>(next.codes.size()), cfg.patch_size);
            cur = std::move(next);
            cell_size *= cfg.pool_strides[j];
        }
        stage_spec.grid_size_m = cell_size;

        // Temporal encoding and merging, then xCPE, then attention.
        const int shift = log2_stride(cfg.temporal_strides[j]);
        std::vector<int> old_to_new;
        cur = tem_block(cur, layout, weights.encoder[j].embed, shift, cfg.patch_size,
                        &old_to_new);
        cum_shift += shift;
        if (j > 0) {
            for (int& parent : recs[j].parent_map) parent = old_to_new[parent];
        }

        cur.features = xcpe(cur.positions, cur.codes, cur.features, weights.encoder[j].xcpe,
                            stage_spec, layout);
        apply_attention_blocks(cur, weights.encoder[j].blocks, cfg.enc_heads[j]);

        recs[j].state = cur;
        recs[j].spec = stage_spec;
        recs[j].cumulative_shift = cum_shift;
        if (trace) {
            ForwardTrace::Stage ts;
            ts.voxel_size = stage_spec.grid_size_m;
            ts.cumulative_time_shift = cum_shift;
            ts.rows = static_cast<int>(cur.codes.size());
            ts.codes = cur.codes;
            trace->encoder.push_back(std::move(ts));
        }
    }

    // Decoder: unpool with skips, coarsest first. Time granularity stays at
    // the final merged level.
    const std::vector<int> dd = cfg.padded_dec_dims();
    for (int d = stage_count - 2; d >= 0; --d) {
        const SerializedState& skip = recs[d].state;
        const int child_rows = static_cast<int>(skip.codes.size());

        const Eigen::MatrixXd unpooled =
            tspc::grid_unpool(cur.features, recs[d + 1].parent_map, skip.features);

        SerializedState next;
        next.positions = skip.positions;
        next.frame_of = skip.frame_of;
        next.source = skip.source;
        next.features = (unpooled * weights.decoder[d].proj_w.transpose()).rowwise() +
                        weights.decoder[d].proj_b.transpose();

        // Re-serialize at this resolution: merged time, continued pattern
        // cycle.
        const int extra_shift = cum_shift - recs[d].cumulative_shift;
        const sfc::SfcPattern pattern = cfg.pattern(stage_count + (stage_count - 2 - d));
        next.codes.resize(child_rows);
        for (int i = 0; i < child_rows; ++i) {
            const tspc::CodeFields f = tspc::unpack_code(skip.codes[i], layout);
            const std::uint64_t space =
                sfc::sfc_encode(next.positions[i], recs[d].spec, pattern);
            next.codes[i] = tspc::pack_code(f.batch, f.time >> extra_shift, space, layout);
        }
        const std::vector<int> old_to_new = sort_state(next);
        next.patches = tspc::patch_group(child_rows, cfg.patch_size);
        // Keep the finer stage's parent map pointing at the re-sorted rows.
        for (int& parent : recs[d].parent_map) parent = old_to_new[parent];

        next.features = xcpe(next.positions, next.codes, next.features, weights.decoder[d].xcpe,
                             recs[d].spec, layout);
        apply_attention_blocks(next, weights.decoder[d].blocks, cfg.dec_heads[d]);
        cur = std::move(next);
    }

    // Particle-wise head on the last frame's rows.
    const int last_frame = frame_count - 1;
    const int n_last = static_cast<int>(frames[last_frame].size());
    StepOutput out;
    out.delta_p = Eigen::MatrixXd::Zero(n_last, 3);
    out.delta_f_dyn = Eigen::MatrixXd::Zero(n_last, cfg.d_dyn);

    const int rows = static_cast<int>(cur.codes.size());
    for (int row = 0; row < rows; ++row) {
        if (cur.frame_of[row] != last_frame) continue;
        const int particle = cur.source[row] - frame_offset[last_frame];
        const Eigen::VectorXd h1 =
            features::gelu(Eigen::VectorXd(weights.head_w1 * cur.features.row(row).transpose() +
                                           weights.head_b1));
        const Eigen::VectorXd h2 = features::gelu(Eigen::VectorXd(weights.head_w2 * h1 + weights.head_b2));
        const Eigen::VectorXd pred = weights.head_w3 * h2 + weights.head_b3;
        if (!frames[last_frame][particle].frozen) {
            out.delta_p.row(particle) = pred.head<3>().transpose();
        }
        out.delta_f_dyn.row(particle) = pred.tail(cfg.d_dyn).transpose();
    }
    return out;
}

std::vector<std::vector<features::ParticleState>> rollout(
    const std::vector<std::vector<features::ParticleState>>& frames, int steps,
    const DynamicsConfig& cfg, const DynamicsWeights& weights) {
    if (steps < 0) throw std::invalid_argument("rollout: negative step count");

    std::vector<std::vector<features::ParticleState>> window = frames;
    std::vector<std::vector<features::ParticleState>> predictions;
    predictions.reserve(steps);

    for (int step = 0; step < steps; ++step) {
        const StepOutput out = forward(window, cfg, weights);
        std::vector<features::ParticleState> next = window.back();
        for (std::size_t i = 0; i < next.size(); ++i) {
            if (!next[i].frozen) next[i].p += out.delta_p.row(static_cast<int>(i)).transpose();
            next[i].f_dyn += out.delta_f_dyn.row(static_cast<int>(i)).transpose();
        }
        predictions.push_back(next);
        window.erase(window.begin());
        window.push_back(std::move(next));
    }
    return predictions;
}

}  // namespace splatsim::dynamics
