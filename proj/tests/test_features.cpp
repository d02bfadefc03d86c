#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rainex/error.hpp"
#include "rainex/features.hpp"
#include "test_support.hpp"

using namespace rainex;
using namespace rainex::features;

namespace {

preprocess::SegmentMask block_mask(int h, int w) {
    // segment 1: an L shape in the upper left, segment 2: a block lower right
    preprocess::SegmentMask m;
    m.frame_time = 1'600'000'000;
    m.height = h;
    m.width = w;
    m.labels.assign(std::size_t(h) * w, 0);
    for (int r = 1; r < 7; ++r) m.labels[r * w + 1] = 1;
    for (int c = 1; c < 6; ++c) m.labels[6 * w + c] = 1;
    for (int r = 8; r < 12; ++r)
        for (int c = 7; c < 12; ++c) m.labels[r * w + c] = 2;
    m.segments.push_back({1, {1, 1, 7, 6}, 10});
    m.segments.push_back({2, {8, 7, 12, 12}, 20});
    return m;
}

}  // namespace

TEST(Features, PruneMapKeepsChannelsThatActivate) {
    model::Shape3 s{5, 2, 2};
    auto a = model::FeatureMap::zeros(s), b = a;
    a.at(1, 0, 0) = 0.3;
    b.at(3, 1, 1) = 1e-9;
    b.at(4, 0, 1) = -2.0;
    std::vector<model::FeatureMap> maps{a, b};
    auto p = compute_prune_map(maps);
    EXPECT_EQ(p.total_channels, 5u);
    EXPECT_EQ(p.active, (std::vector<std::uint32_t>{1, 3}));
    EXPECT_THROW(compute_prune_map({}), DataError);
    ChannelPruneMap bad{{2, 1}, 5};
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Features, ConstantChannelsResizeToConstants) {
    model::Shape3 s{3, 6, 6};
    auto f = model::FeatureMap::zeros(s);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 6; ++c) {
            f.at(0, r, c) = 2.5;
            f.at(2, r, c) = -1.0;
        }
    auto mask = block_mask(12, 12);
    ChannelPruneMap prune{{0, 2}, 3};
    // segment 2 covers whole bottleneck cells, so every cell of its window is inside
    auto sf = extract_segment_feature(f, mask, 2, prune);
    ASSERT_EQ(sf.values.size(), 2u * kSegmentCells);
    for (int i = 0; i < kSegmentCells; ++i) {
        EXPECT_FLOAT_EQ(sf.values[i], 2.5f);
        EXPECT_FLOAT_EQ(sf.values[kSegmentCells + i], -1.0f);
    }
    EXPECT_EQ(sf.meta.key.segment_id, 2);
    EXPECT_EQ(sf.meta.key.timestamp, 1'600'000'000);
    EXPECT_EQ(sf.meta.pixels, 20);
    EXPECT_THROW(extract_segment_feature(f, mask, 9, prune), NotFound);
    EXPECT_THROW(extract_segment_feature(f, mask, 1, {{0}, 4}), ConfigError);
}

TEST(Features, LiftIsNormalizedAdjointOfExtraction) {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> nd;
    model::Shape3 s{4, 6, 6};
    auto mask = block_mask(12, 12);
    ChannelPruneMap prune{{0, 1, 3}, 4};
    for (std::int32_t seg : {1, 2}) {
        std::vector<float> g(prune.active.size() * kSegmentCells);
        for (auto& v : g) v = float(nd(rng));
        // column j of the extraction matrix is extract(e_j); the adjoint applied to g is
        // <extract(e_j), g> for each j
        std::vector<double> adj(s.size());
        for (std::size_t j = 0; j < s.size(); ++j) {
            auto e = model::FeatureMap::zeros(s);
            e.values[j] = 1.0;
            auto col = extract_segment_feature(e, mask, seg, prune).values;
            double dot = 0;
            for (std::size_t i = 0; i < g.size(); ++i) dot += double(col[i]) * g[i];
            adj[j] = dot;
        }
        double norm = 0;
        for (double v : adj) norm += v * v;
        norm = std::sqrt(norm);
        auto lifted = lift_direction(g, s, prune, &mask, seg);
        for (std::size_t j = 0; j < s.size(); ++j) EXPECT_NEAR(lifted.values[j], adj[j] / norm, 1e-6);
    }
    // whole-frame lift spreads over every cell of an active channel
    std::vector<float> ones(prune.active.size() * kSegmentCells, 1.0f);
    auto whole = lift_direction(ones, s, prune);
    double n2 = 0;
    for (double v : whole.values) n2 += v * v;
    EXPECT_NEAR(n2, 1.0, 1e-12);
    for (int r = 0; r < 6; ++r) EXPECT_GT(whole.at(3, r, r), 0.0);
    for (int r = 0; r < 6; ++r) EXPECT_EQ(whole.at(2, r, r), 0.0);
    std::vector<float> zeros(ones.size(), 0.0f);
    EXPECT_THROW(lift_direction(zeros, s, prune), DataError);
}

TEST(Features, StoreRoundTrip) {
    testkit::TempDir dir;
    std::mt19937_64 rng(42);
    std::normal_distribution<float> nd;
    FeatureStore store(7);
    for (int i = 0; i < 20; ++i) {
        std::vector<float> v(7);
        for (auto& x : v) x = nd(rng);
        SegmentMeta m{{1'600'000'000 + i * 600, i % 3 + 1}, {1, 2, 3, 4}, 10 + i};
        store.add(v, m);
    }
    EXPECT_THROW(store.add(std::vector<float>(6), {}), ConfigError);
    write_feature_store(dir / "f.fstr", store);
    auto back = read_feature_store(dir / "f.fstr");
    EXPECT_EQ(back.dim(), 7u);
    EXPECT_EQ(back.values(), store.values());
    ASSERT_EQ(back.size(), 20u);
    for (std::size_t i = 0; i < 20; ++i) {
        EXPECT_EQ(back.meta(i).key, store.meta(i).key);
        EXPECT_EQ(back.meta(i).bbox, store.meta(i).bbox);
        EXPECT_EQ(back.meta(i).pixels, store.meta(i).pixels);
    }
    EXPECT_EQ(back.find({1'600'000'000 + 5 * 600, 3}), 5);
    EXPECT_EQ(back.find({1, 1}), -1);
    auto bytes = testkit::slurp(dir / "f.fstr");
    testkit::spit(dir / "t.fstr", bytes.substr(0, bytes.size() - 4));
    EXPECT_THROW(read_feature_store(dir / "t.fstr"), FormatError);
}

TEST(Features, PruneMapRoundTrip) {
    testkit::TempDir dir;
    ChannelPruneMap p{{0, 5, 9, 63}, 64};
    write_prune_map(dir / "p.bin", p);
    EXPECT_EQ(read_prune_map(dir / "p.bin"), p);
    EXPECT_THROW(read_prune_map(dir / "none.bin"), MissingArtifact);
}
