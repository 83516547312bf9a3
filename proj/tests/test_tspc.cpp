// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "splatsim/tspc.hpp"

using namespace splatsim;
using tspc::CodeLayout;

namespace {

CodeLayout layout_tau(int tau) {
    CodeLayout layout;
    layout.tau_bits = tau;
    return layout;
}

std::vector<std::vector<Eigen::Vector3d>> random_frames(int frames, int particles,
                                                        std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<Eigen::Vector3d>> out(frames);
    for (auto& f : out) {
        f.reserve(particles);
        for (int i = 0; i < particles; ++i) f.push_back({u(rng), u(rng), u(rng)});
    }
    return out;
}

}  // namespace

TEST_CASE("pack_code layout") {
    CHECK(tspc::pack_code(0, 0, 0, layout_tau(2)) == 0);
    CHECK(tspc::pack_code(0, 3, 5, layout_tau(2)) == 844424930131973ull);
    CHECK(tspc::pack_code(1, 0, 0, layout_tau(2)) == (1ull << 50));

    CHECK_THROWS_AS(tspc::pack_code(0, 4, 0, layout_tau(2)), FieldOverflow);
    CHECK_THROWS_AS(tspc::pack_code(0, 0, 1ull << 48, layout_tau(2)), FieldOverflow);
    CHECK_THROWS_AS(tspc::pack_code(1ull << 14, 0, 0, layout_tau(2)), FieldOverflow);

    // The error names the offending field.
    try {
        tspc::pack_code(0, 4, 0, layout_tau(2));
        CHECK(false);
    } catch (const FieldOverflow& e) {
        CHECK(std::string(e.what()).find("time") != std::string::npos);
    }
}

TEST_CASE("unpack_code inverts pack_code") {
    const CodeLayout layout = layout_tau(2);
    auto check_roundtrip = [&](std::uint64_t b, std::uint64_t t, std::uint64_t s) {
        const tspc::CodeFields f = tspc::unpack_code(tspc::pack_code(b, t, s, layout), layout);
        CHECK(f.batch == b);
        CHECK(f.time == t);
        CHECK(f.space == s);
    };
    check_roundtrip(0, 0, 0);
    check_roundtrip(0, 3, 5);
    check_roundtrip(1, 0, 0);

    std::mt19937_64 rng(31);
    for (int it = 0; it < 100000; ++it) {
        check_roundtrip(rng() & 0x3FFF, rng() & 3, rng() & ((1ull << 48) - 1));
    }
}

TEST_CASE("code ordering sorts by (batch, time, space)") {
    const CodeLayout layout = layout_tau(4);
    std::mt19937_64 rng(37);
    for (int it = 0; it < 100000; ++it) {
        const std::uint64_t b = rng() & 0xFF;
        const std::uint64_t t1 = rng() & 15, t2 = rng() & 15;
        const std::uint64_t s1 = rng() & ((1ull << 48) - 1), s2 = rng() & ((1ull << 48) - 1);
        const std::uint64_t c1 = tspc::pack_code(b, t1, s1, layout);
        const std::uint64_t c2 = tspc::pack_code(b, t2, s2, layout);
        if (t1 < t2) {
            CHECK(c1 < c2); // regardless of space fields
        } else if (t1 == t2) {
            CHECK((c1 < c2) == (s1 < s2));
        }
    }
}

TEST_CASE("CodeLayout::for_length") {
    CHECK(CodeLayout::for_length(1).tau_bits == 0);
    CHECK(CodeLayout::for_length(2).tau_bits == 1);
    CHECK(CodeLayout::for_length(3).tau_bits == 2); // ceil(log2 3)
    CHECK(CodeLayout::for_length(4).tau_bits == 2);
    CHECK(CodeLayout::for_length(16).tau_bits == 4);
}

TEST_CASE("serialize_cloud basics") {
    const sfc::GridSpec spec{0.004, Eigen::Vector3d::Zero()};
    const auto pattern = sfc::SfcPattern::zorder();

    SUBCASE("one particle at origin") {
        const auto cloud = tspc::serialize_cloud({{Eigen::Vector3d::Zero()}}, 0, spec, pattern,
                                                 layout_tau(0));
        CHECK(cloud.codes == std::vector<std::uint64_t>{0});
        CHECK(cloud.perm == std::vector<int>{0});
        CHECK(cloud.frame_of == std::vector<int>{0});
    }

    SUBCASE("time field is more significant than space") {
        const Eigen::Vector3d p{0.1, 0.2, 0.3};
        const auto cloud = tspc::serialize_cloud({{p}, {p}}, 0, spec, pattern, layout_tau(1));
        CHECK(cloud.size() == 2);
        CHECK(cloud.frame_of[0] == 0); // frame 0 sorts first
        CHECK(cloud.frame_of[1] == 1);
        const CodeLayout layout = layout_tau(1);
        CHECK(tspc::unpack_code(cloud.codes[0], layout).space ==
              tspc::unpack_code(cloud.codes[1], layout).space);
        CHECK(tspc::unpack_code(cloud.codes[0], layout).time == 0);
        CHECK(tspc::unpack_code(cloud.codes[1], layout).time == 1);
    }

    SUBCASE("frame count must fit the time field") {
        const auto frames = random_frames(3, 1, 41);
        CHECK_THROWS_AS(tspc::serialize_cloud(frames, 0, spec, pattern, layout_tau(1)),
                        FieldOverflow);
    }
}

TEST_CASE("serialize_cloud matches an independent tuple sort") {
    const sfc::GridSpec spec{0.004, {-0.5, -0.5, -0.5}};
    const CodeLayout layout = layout_tau(2);

    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto frames = random_frames(4, 1000, 100 + seed);
        for (const auto& pattern : sfc::pattern_cycle()) {
            const auto cloud = tspc::serialize_cloud(frames, 0, spec, pattern, layout);

            // Oracle: comparison sort on explicit (batch, time, space) tuples.
            struct Entry {
                std::uint64_t t, s;
                Eigen::Vector3d p;
                int flat;
            };
            std::vector<Entry> entries;
            int flat = 0;
            for (std::uint64_t k = 0; k < frames.size(); ++k) {
                for (const auto& p : frames[k]) {
                    entries.push_back({k, sfc::sfc_encode(p, spec, pattern), p, flat++});
                }
            }
            std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
                if (a.t != b.t) return a.t < b.t;
                if (a.s != b.s) return a.s < b.s;
                for (int i = 0; i < 3; ++i) {
                    if (a.p[i] != b.p[i]) return a.p[i] < b.p[i];
                }
                return a.flat < b.flat;
            });

            REQUIRE(cloud.size() == static_cast<int>(entries.size()));
            for (int i = 0; i < cloud.size(); ++i) {
                CHECK(tspc::unpack_code(cloud.codes[i], layout).time == entries[i].t);
                CHECK(tspc::unpack_code(cloud.codes[i], layout).space == entries[i].s);
                CHECK(cloud.positions[i] == entries[i].p);
                CHECK(cloud.perm[i] == entries[i].flat);
            }
        }
    }
}

TEST_CASE("serialization is permutation-invariant") {
    const sfc::GridSpec spec{0.004, {-0.5, -0.5, -0.5}};
    const CodeLayout layout = layout_tau(2);
    auto frames = random_frames(4, 500, 53);
    const auto cloud = tspc::serialize_cloud(frames, 0, spec, sfc::SfcPattern::hilbert(), layout);

    std::mt19937_64 rng(59);
    for (auto& f : frames) std::shuffle(f.begin(), f.end(), rng);
    const auto shuffled = tspc::serialize_cloud(frames, 0, spec, sfc::SfcPattern::hilbert(), layout);

    CHECK(cloud.codes == shuffled.codes);
    for (int i = 0; i < cloud.size(); ++i) {
        CHECK(cloud.positions[i] == shuffled.positions[i]);
        CHECK(cloud.frame_of[i] == shuffled.frame_of[i]);
    }
}

TEST_CASE("temporal_merge halves time groups") {
    const sfc::GridSpec spec{0.004, Eigen::Vector3d::Zero()};
    const CodeLayout layout = layout_tau(1);

    SUBCASE("times 0 and 1 share a group after one merge") {
        const Eigen::Vector3d p{0.1, 0.1, 0.1};
        auto cloud = tspc::serialize_cloud({{p}, {p}}, 0, spec, sfc::SfcPattern::zorder(), layout);
        const auto merged = tspc::temporal_merge(cloud, layout);
        CHECK(tspc::unpack_code(merged.codes[0], layout).time == 0);
        CHECK(tspc::unpack_code(merged.codes[1], layout).time == 0);
    }

    SUBCASE("single code examples") {
        const CodeLayout l2 = layout_tau(2);
        const std::uint64_t c = tspc::pack_code(0, 3, 9, l2);
        const tspc::CodeFields f = tspc::unpack_code(tspc::merge_code(c, l2), l2);
        CHECK(f.time == 1);
        CHECK(f.space == 9);
        CHECK(f.batch == 0);
        CHECK(tspc::merge_code(tspc::pack_code(0, 0, 9, l2), l2) == tspc::pack_code(0, 0, 9, l2));
    }
}

TEST_CASE("temporal_merge never touches batch or space bits") {
    const CodeLayout layout = layout_tau(4);
    std::mt19937_64 rng(61);
    for (int it = 0; it < 100000; ++it) {
        const std::uint64_t b = rng() & 0xFFF, t = rng() & 15, s = rng() & ((1ull << 48) - 1);
        const std::uint64_t merged = tspc::merge_code(tspc::pack_code(b, t, s, layout), layout);
        const tspc::CodeFields f = tspc::unpack_code(merged, layout);
        CHECK(f.batch == b);
        CHECK(f.space == s);
        CHECK(f.time == (t >> 1));
    }
}

TEST_CASE("k merges group times iff floor(t / 2^k) agrees, exhaustive tau <= 4") {
    for (int tau = 1; tau <= 4; ++tau) {
        const CodeLayout layout = layout_tau(tau);
        const int tmax = 1 << tau;
        for (int k = 0; k <= tau; ++k) {
            for (int t1 = 0; t1 < tmax; ++t1) {
                for (int t2 = 0; t2 < tmax; ++t2) {
                    std::uint64_t c1 = tspc::pack_code(0, t1, 7, layout);
                    std::uint64_t c2 = tspc::pack_code(0, t2, 7, layout);
                    for (int m = 0; m < k; ++m) {
                        c1 = tspc::merge_code(c1, layout);
                        c2 = tspc::merge_code(c2, layout);
                    }
                    CHECK((c1 == c2) == ((t1 >> k) == (t2 >> k)));
                }
            }
        }
    }
}

TEST_CASE("patch_group padding rules") {
    SUBCASE("exact multiple: no padding") {
        const auto plan = tspc::patch_group(2048, 1024);
        CHECK(plan.patches.size() == 2);
        CHECK(plan.padded_count() == 0);
    }

    SUBCASE("short last patch borrows the preceding tail") {
        const auto plan = tspc::patch_group(2500, 1024);
        REQUIRE(plan.patches.size() == 3);
        CHECK(plan.padded_count() == 572);
        // 572 borrowed entries: indices 1476..2047, then the 452 real ones.
        for (int s = 0; s < 572; ++s) {
            CHECK(plan.patches[2][s] == 1476 + s);
            CHECK(plan.pad_mask[2][s] == 1);
        }
        for (int s = 572; s < 1024; ++s) {
            CHECK(plan.patches[2][s] == 2048 + (s - 572));
            CHECK(plan.pad_mask[2][s] == 0);
        }
    }

    SUBCASE("lone short patch repeats its own last entry") {
        const auto plan = tspc::patch_group(5, 8);
        REQUIRE(plan.patches.size() == 1);
        for (int s = 0; s < 5; ++s) {
            CHECK(plan.patches[0][s] == s);
            CHECK(plan.pad_mask[0][s] == 0);
        }
        for (int s = 5; s < 8; ++s) {
            CHECK(plan.patches[0][s] == 4);
            CHECK(plan.pad_mask[0][s] == 1);
        }
    }

    SUBCASE("empty cloud is rejected") {
        CHECK_THROWS(tspc::patch_group(0, 8));
    }
}

TEST_CASE("patch_group covers every real index exactly once") {
    std::mt19937_64 rng(67);
    for (int it = 0; it < 50; ++it) {
        const int n = 1 + static_cast<int>(rng() % 5000);
        const int patch = 1 << (1 + rng() % 9);
        const auto plan = tspc::patch_group(n, patch);

        std::vector<int> seen(n, 0);
        int padded = 0;
        for (std::size_t p = 0; p < plan.patches.size(); ++p) {
            REQUIRE(plan.patches[p].size() == static_cast<std::size_t>(patch));
            for (int s = 0; s < patch; ++s) {
                if (plan.pad_mask[p][s]) {
                    ++padded;
                } else {
                    seen[plan.patches[p][s]] += 1;
                }
            }
        }
        for (int i = 0; i < n; ++i) CHECK(seen[i] == 1);
        CHECK(padded == static_cast<int>(plan.patches.size()) * patch - n);
    }
}

TEST_CASE("grid_pool") {
    const CodeLayout layout = layout_tau(2);
    const sfc::GridSpec spec{0.004, Eigen::Vector3d::Zero()};
    const auto pattern = sfc::SfcPattern::zorder();

    SUBCASE("stride 1/1 is the identity") {
        const auto frames = random_frames(2, 64, 71);
        const auto cloud = tspc::serialize_cloud(frames, 0, spec, pattern, layout);
        Eigen::MatrixXd feats = Eigen::MatrixXd::Random(cloud.size(), 5);
        const auto pooled = tspc::grid_pool(cloud, feats, 1, 1, spec, layout, pattern);
        CHECK(pooled.cloud.codes == cloud.codes);
        CHECK(pooled.features == feats);
        for (int i = 0; i < cloud.size(); ++i) CHECK(pooled.parent_map[i] == i);
    }

    SUBCASE("two cells pool to one coarse parent at the midpoint") {
        // Grid coords (4,5,6) and (5,5,7) at stride 2 share coarse cell (2,2,3).
        const Eigen::Vector3d a{4.5 * 0.004, 5.5 * 0.004, 6.5 * 0.004};
        const Eigen::Vector3d b{5.5 * 0.004, 5.5 * 0.004, 7.5 * 0.004};
        const auto cloud = tspc::serialize_cloud({{a, b}}, 0, spec, pattern, layout);
        Eigen::MatrixXd feats(2, 2);
        feats << 1.0, -3.0, 0.5, 2.0;
        const auto pooled = tspc::grid_pool(cloud, feats, 2, 1, spec, layout, pattern);
        REQUIRE(pooled.cloud.size() == 1);
        CHECK(pooled.parent_map == std::vector<int>{0, 0});
        CHECK(pooled.cloud.positions[0].isApprox((a + b) / 2));
        const std::uint64_t space = tspc::unpack_code(pooled.cloud.codes[0], layout).space;
        CHECK(space == sfc::sfc_encode_coord({2, 2, 3}, pattern));
        // componentwise max
        CHECK(pooled.features(0, 0) == 1.0);
        CHECK(pooled.features(0, 1) == 2.0);
    }

    SUBCASE("parent count equals the independent grouping oracle") {
        const auto frames = random_frames(4, 2500, 73);
        const auto cloud = tspc::serialize_cloud(frames, 0, spec, pattern, layout);
        Eigen::MatrixXd feats = Eigen::MatrixXd::Random(cloud.size(), 3);
        const int spatial_stride = 4, temporal_stride = 2;
        const auto pooled =
            tspc::grid_pool(cloud, feats, spatial_stride, temporal_stride, spec, layout, pattern);

        std::set<std::tuple<std::uint64_t, std::uint64_t, int, int, int>> keys;
        for (int i = 0; i < cloud.size(); ++i) {
            const auto f = tspc::unpack_code(cloud.codes[i], layout);
            const auto g = sfc::quantize(cloud.positions[i], spec);
            keys.insert({f.batch, f.time >> 1, g.x / spatial_stride, g.y / spatial_stride,
                         g.z / spatial_stride});
        }
        CHECK(pooled.cloud.size() == static_cast<int>(keys.size()));

        // Every parent position is the mean of its children.
        std::vector<Eigen::Vector3d> sums(pooled.cloud.size(), Eigen::Vector3d::Zero());
        std::vector<int> counts(pooled.cloud.size(), 0);
        for (int i = 0; i < cloud.size(); ++i) {
            sums[pooled.parent_map[i]] += cloud.positions[i];
            counts[pooled.parent_map[i]] += 1;
        }
        for (int j = 0; j < pooled.cloud.size(); ++j) {
            REQUIRE(counts[j] > 0);
            CHECK(pooled.cloud.positions[j].isApprox(sums[j] / counts[j], 1e-12));
        }
    }
}

TEST_CASE("grid_unpool broadcasts parents and concatenates skips") {
    Eigen::MatrixXd pooled(2, 2);
    pooled << 1, 2, 3, 4;

    SUBCASE("bijective map is elementwise concat") {
        Eigen::MatrixXd skip(2, 1);
        skip << 9, 8;
        const Eigen::MatrixXd out = tspc::grid_unpool(pooled, {0, 1}, skip);
        REQUIRE(out.rows() == 2);
        REQUIRE(out.cols() == 3);
        CHECK(out(0, 0) == 1);
        CHECK(out(0, 2) == 9);
        CHECK(out(1, 1) == 4);
        CHECK(out(1, 2) == 8);
    }

    SUBCASE("one parent broadcast to three children") {
        Eigen::MatrixXd skip = Eigen::MatrixXd::Zero(3, 1);
        const Eigen::MatrixXd out = tspc::grid_unpool(pooled, {1, 1, 1}, skip);
        for (int i = 0; i < 3; ++i) {
            CHECK(out(i, 0) == 3);
            CHECK(out(i, 1) == 4);
        }
    }

    SUBCASE("shape errors") {
        Eigen::MatrixXd skip = Eigen::MatrixXd::Zero(3, 1);
        CHECK_THROWS_AS(tspc::grid_unpool(pooled, {0, 1}, skip), ShapeMismatch);
        CHECK_THROWS_AS(tspc::grid_unpool(pooled, {0, 5, 1}, skip), ShapeMismatch);
    }

    SUBCASE("pool then unpool preserves the child count") {
        const CodeLayout layout = layout_tau(1);
        const sfc::GridSpec spec{0.004, Eigen::Vector3d::Zero()};
        const auto frames = random_frames(2, 300, 79);
        const auto cloud = tspc::serialize_cloud(frames, 0, spec, sfc::SfcPattern::zorder(), layout);
        Eigen::MatrixXd feats = Eigen::MatrixXd::Random(cloud.size(), 4);
        const auto pooled =
            tspc::grid_pool(cloud, feats, 2, 2, spec, layout, sfc::SfcPattern::zorder());
        const Eigen::MatrixXd out = tspc::grid_unpool(pooled.features, pooled.parent_map, feats);
        CHECK(out.rows() == cloud.size());
        CHECK(out.cols() == 8);
    }
}
