// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used only by tests. These stay
// deliberately naive (per-bit loops, dense O(n^2) math) so they cannot
// share bugs with the optimized library paths.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace oracles {

// Morton code by explicit per-bit interleaving: triple (z, y, x) per level,
// x least significant.
inline std::uint64_t morton_bitloop(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
    std::uint64_t code = 0;
    for (int k = 0; k < 16; ++k) {
        const std::uint64_t xk = (x >> k) & 1u, yk = (y >> k) & 1u, zk = (z >> k) & 1u;
        code |= (zk * 4 + yk * 2 + xk) << (3 * k);
    }
    return code;
}

// Literal transcription of Skilling's transpose algorithm ("Programming the
// Hilbert Curve", AIP Conf. Proc. 707, 2004). Transpose packed with X[0]
// taking the most significant bit of each level.
inline void skilling_axes_to_transpose(std::uint32_t* X, int bits, int dims) {
    std::uint32_t M = 1u << (bits - 1), P, Q, t;
    for (Q = M; Q > 1; Q >>= 1) {
        P = Q - 1;
        for (int i = 0; i < dims; i++) {
            if (X[i] & Q) {
                X[0] ^= P;
            } else {
                t = (X[0] ^ X[i]) & P;
                X[0] ^= t;
                X[i] ^= t;
            }
        }
    }
    for (int i = 1; i < dims; i++) X[i] ^= X[i - 1];
    t = 0;
    for (Q = M; Q > 1; Q >>= 1) {
        if (X[dims - 1] & Q) t ^= Q - 1;
    }
    for (int i = 0; i < dims; i++) X[i] ^= t;
}

inline void skilling_transpose_to_axes(std::uint32_t* X, int bits, int dims) {
    std::uint32_t N = 2u << (bits - 1), P, Q, t;
    t = X[dims - 1] >> 1;
    for (int i = dims - 1; i > 0; i--) X[i] ^= X[i - 1];
    X[0] ^= t;
    for (Q = 2; Q != N; Q <<= 1) {
        P = Q - 1;
        for (int i = dims - 1; i >= 0; i--) {
            if (X[i] & Q) {
                X[0] ^= P;
            } else {
                t = (X[0] ^ X[i]) & P;
                X[0] ^= t;
                X[i] ^= t;
            }
        }
    }
}

inline std::uint64_t hilbert_reference(std::uint32_t x, std::uint32_t y, std::uint32_t z,
                                       int bits) {
    std::uint32_t X[3] = {x, y, z};
    skilling_axes_to_transpose(X, bits, 3);
    std::uint64_t code = 0;
    for (int k = bits - 1; k >= 0; --k) {
        code = (code << 3) | (((X[0] >> k) & 1u) << 2) | (((X[1] >> k) & 1u) << 1) |
               ((X[2] >> k) & 1u);
    }
    return code;
}

inline void hilbert_reference_decode(std::uint64_t code, int bits, std::uint32_t* x,
                                     std::uint32_t* y, std::uint32_t* z) {
    std::uint32_t X[3] = {0, 0, 0};
    for (int k = 0; k < bits; ++k) {
        X[0] |= static_cast<std::uint32_t>((code >> (3 * k + 2)) & 1u) << k;
        X[1] |= static_cast<std::uint32_t>((code >> (3 * k + 1)) & 1u) << k;
        X[2] |= static_cast<std::uint32_t>((code >> (3 * k)) & 1u) << k;
    }
    skilling_transpose_to_axes(X, bits, 3);
    *x = X[0];
    *y = X[1];
    *z = X[2];
}

// Dense single-head-at-a-time attention with explicit loops: pre-LN MHA +
// residual, then feed-forward + residual. Mirrors the weight layout of
// dynamics::AttentionBlockWeights.
struct DenseAttentionWeights {
    Eigen::VectorXd ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    Eigen::MatrixXd wq, wk, wv, wo;
    Eigen::VectorXd bq, bk, bv, bo;
    Eigen::MatrixXd ffn1, ffn2;
    Eigen::VectorXd ffn1_b, ffn2_b;
};

inline Eigen::VectorXd dense_layer_norm_row(const Eigen::VectorXd& x,
                                            const Eigen::VectorXd& gamma,
                                            const Eigen::VectorXd& beta) {
    const int d = static_cast<int>(x.size());
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= d;
    Eigen::VectorXd out(d);
    for (int i = 0; i < d; ++i) out[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * gamma[i] + beta[i];
    return out;
}

inline double dense_gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

inline Eigen::MatrixXd dense_attention(const Eigen::MatrixXd& tokens,
                                       const DenseAttentionWeights& w, int heads) {
    const int n = static_cast<int>(tokens.rows());
    const int d = static_cast<int>(tokens.cols());
    const int hd = d / heads;

    Eigen::MatrixXd normed(n, d);
    for (int i = 0; i < n; ++i) {
        normed.row(i) =
            dense_layer_norm_row(tokens.row(i).transpose(), w.ln1_gamma, w.ln1_beta).transpose();
    }

    Eigen::MatrixXd q(n, d), k(n, d), v(n, d);
    for (int i = 0; i < n; ++i) {
        q.row(i) = (w.wq * normed.row(i).transpose() + w.bq).transpose();
        k.row(i) = (w.wk * normed.row(i).transpose() + w.bk).transpose();
        v.row(i) = (w.wv * normed.row(i).transpose() + w.bv).transpose();
    }

    Eigen::MatrixXd attended = Eigen::MatrixXd::Zero(n, d);
    for (int h = 0; h < heads; ++h) {
        for (int i = 0; i < n; ++i) {
            std::vector<double> scores(n);
            double max_score = -1e300;
            for (int j = 0; j < n; ++j) {
                double dot = 0.0;
                for (int a = 0; a < hd; ++a) dot += q(i, h * hd + a) * k(j, h * hd + a);
                scores[j] = dot / std::sqrt(static_cast<double>(hd));
                max_score = std::max(max_score, scores[j]);
            }
            double denom = 0.0;
            for (int j = 0; j < n; ++j) {
                scores[j] = std::exp(scores[j] - max_score);
                denom += scores[j];
            }
            for (int j = 0; j < n; ++j) {
                const double wgt = scores[j] / denom;
                for (int a = 0; a < hd; ++a) attended(i, h * hd + a) += wgt * v(j, h * hd + a);
            }
        }
    }

    Eigen::MatrixXd after(n, d);
    for (int i = 0; i < n; ++i) {
        after.row(i) = tokens.row(i) + (w.wo * attended.row(i).transpose() + w.bo).transpose();
    }

    Eigen::MatrixXd out(n, d);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd normed2 =
            dense_layer_norm_row(after.row(i).transpose(), w.ln2_gamma, w.ln2_beta);
        Eigen::VectorXd hidden = w.ffn1 * normed2 + w.ffn1_b;
        for (int a = 0; a < hidden.size(); ++a) hidden[a] = dense_gelu(hidden[a]);
        out.row(i) = after.row(i) + (w.ffn2 * hidden + w.ffn2_b).transpose();
    }
    return out;
}

}  // namespace oracles
