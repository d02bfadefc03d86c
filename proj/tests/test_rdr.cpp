#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "rainex/error.hpp"
#include "rainex/rdr.hpp"
#include "test_support.hpp"

using namespace rainex;
using namespace rainex::rdr;

namespace {

std::vector<std::vector<float>> random_rows(std::mt19937_64& rng, std::size_t n, std::size_t dim,
                                            double p_active) {
    std::bernoulli_distribution on(p_active);
    std::uniform_real_distribution<float> mag(0.01f, 2.0f);
    std::vector<std::vector<float>> rows(n, std::vector<float>(dim));
    for (auto& r : rows)
        for (auto& v : r) v = on(rng) ? mag(rng) : -mag(rng) * 0.0f;
    return rows;
}

prober::RowSet view(const std::vector<std::vector<float>>& rows) {
    prober::RowSet v;
    for (const auto& r : rows) v.push_back(r);
    return v;
}

}  // namespace

TEST(Rdr, ScoresMatchDirectDefinition) {
    std::mt19937_64 rng(42);
    const std::size_t dim = 40;
    auto pos = random_rows(rng, 30, dim, 0.6), neg = random_rows(rng, 50, dim, 0.3);
    // concept coordinates: always on for positives, rarely on for negatives
    for (auto& r : pos)
        for (std::size_t i : {3, 17, 29}) r[i] = 1.0f;
    for (auto& r : neg)
        for (std::size_t i : {3, 17, 29}) r[i] = 0.0f;
    auto sel = select_components(view(pos), view(neg), 5);

    std::vector<double> negvec(dim, 0.0), score(dim, 0.0);
    for (const auto& r : neg)
        for (std::size_t i = 0; i < dim; ++i) negvec[i] += (r[i] > 0.0f) / double(neg.size());
    for (const auto& r : pos)
        for (std::size_t i = 0; i < dim; ++i)
            score[i] += std::abs((r[i] > 0.0f ? 1.0 : 0.0) - negvec[i]) / double(pos.size());
    for (std::size_t i = 0; i < dim; ++i) EXPECT_NEAR(sel.scores[i], score[i], 1e-12);

    std::vector<std::uint32_t> order(dim);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return score[a] > score[b]; });
    order.resize(5);
    EXPECT_EQ(sel.ranked, order);
    std::vector<std::uint32_t> top3(sel.ranked.begin(), sel.ranked.begin() + 3);
    std::sort(top3.begin(), top3.end());
    EXPECT_EQ(top3, (std::vector<std::uint32_t>{3, 17, 29}));
    EXPECT_FALSE(sel.clamped);
}

TEST(Rdr, TiesBreakByIndexAndClamp) {
    std::vector<std::vector<float>> pos{{1, 1, 0, 0}}, neg{{0, 0, 0, 0}};
    auto sel = select_components(view(pos), view(neg), 10);
    EXPECT_TRUE(sel.clamped);
    EXPECT_EQ(sel.ranked, (std::vector<std::uint32_t>{0, 1, 2, 3}));
    EXPECT_THROW(select_components(view(pos), view(neg), 0), ConfigError);
    EXPECT_THROW(select_components({}, view(neg), 2), DataError);
    auto nv = negative_vector(view(std::vector<std::vector<float>>{{1, 0}, {1, 1}, {0, 0}, {2, -1}}));
    EXPECT_DOUBLE_EQ(nv[0], 0.75);
    EXPECT_DOUBLE_EQ(nv[1], 0.25);
}

TEST(Rdr, BuildMapAndRoundTrip) {
    testkit::TempDir dir;
    std::mt19937_64 rng(42);
    const std::uint32_t dim = 30;
    features::FeatureStore store(dim);
    prober::ConceptLabelSet labels;
    labels.concepts = {{0, "a", prober::ConceptSource::Synth}, {1, "b", prober::ConceptSource::Synth},
                       {2, "rare", prober::ConceptSource::Synth}};
    auto rows = random_rows(rng, 200, dim, 0.2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        features::SegmentMeta m{{Timestamp(i) * 600, 1}, {}, 1};
        if (i < 60) {
            rows[i][5] = rows[i][6] = 1.0f;
            labels.assignments[m.key] = {0};
        } else if (i < 120) {
            rows[i][20] = 1.0f;
            labels.assignments[m.key] = {1};
        } else if (i < 125) {
            labels.assignments[m.key] = {2};
        }
        store.add(rows[i], m);
    }
    prober::ProberBundle probers;
    for (int id : {0, 1}) {
        prober::ConceptProber p;
        p.concept_id = id;
        for (auto& f : p.folds) f.weights.assign(dim, 0.0f);
        p.cav.assign(dim, 0.0f);
        p.cav[0] = 1.0f;
        probers.add(p);
    }
    auto rep = build_map(labels, store, probers, 4);
    ASSERT_EQ(rep.skipped.size(), 1u);
    EXPECT_EQ(rep.skipped[0].concept_id(), 2);
    ASSERT_NE(rep.map.find(0), nullptr);
    const auto& c0 = *rep.map.find(0);
    EXPECT_TRUE(std::is_sorted(c0.begin(), c0.end()));
    EXPECT_TRUE(std::count(c0.begin(), c0.end(), 5u) && std::count(c0.begin(), c0.end(), 6u));
    EXPECT_TRUE(std::count(rep.map.find(1)->begin(), rep.map.find(1)->end(), 20u));
    EXPECT_EQ(rep.map.find(2), nullptr);

    write_pc_map(dir / "m.pcmp", rep.map);
    EXPECT_EQ(read_pc_map(dir / "m.pcmp"), rep.map);
    auto broken = rep.map;
    broken.per_concept[0].pop_back();
    EXPECT_THROW(write_pc_map(dir / "x.pcmp", broken), ConfigError);
}
