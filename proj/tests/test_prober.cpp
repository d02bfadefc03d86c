#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rainex/error.hpp"
#include "rainex/eval.hpp"
#include "rainex/prober.hpp"
#include "test_support.hpp"

using namespace rainex;
using namespace rainex::prober;

namespace {

struct Cloud {
    std::vector<std::vector<float>> rows;
    RowSet view() const {
        RowSet v;
        for (const auto& r : rows) v.push_back(r);
        return v;
    }
};

/// Gaussian cloud around `centre` on the first coordinate; other coordinates are noise.
Cloud cloud(std::mt19937_64& rng, std::size_t n, std::size_t dim, double centre, double sd) {
    std::normal_distribution<double> nd(0.0, sd);
    Cloud c;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> x(dim);
        for (auto& v : x) v = float(nd(rng));
        x[0] = float(centre + nd(rng));
        c.rows.push_back(std::move(x));
    }
    return c;
}

}  // namespace

TEST(Dataset, SplitCounts) {
    EXPECT_EQ(split_counts(40, 0.1), (std::pair<std::size_t, std::size_t>{36, 4}));
    EXPECT_EQ(split_counts(41, 0.1), (std::pair<std::size_t, std::size_t>{36, 5}));
    EXPECT_EQ(split_counts(10, 0.1), (std::pair<std::size_t, std::size_t>{9, 1}));
    EXPECT_EQ(split_counts(0, 0.1), (std::pair<std::size_t, std::size_t>{0, 0}));
}

TEST(Dataset, BinaryDatasetIsBalancedAndDisjoint) {
    features::FeatureStore store(2);
    ConceptLabelSet labels;
    labels.concepts = {{0, "a", ConceptSource::Synth}, {1, "b", ConceptSource::Synth},
                       {2, "c", ConceptSource::Synth}};
    for (int i = 0; i < 300; ++i) {
        features::SegmentMeta m{{Timestamp(i) * 600, 1}, {}, 1};
        store.add(std::vector<float>{float(i), 0.0f}, m);
        if (i < 40) labels.assignments[m.key] = {0};
        else if (i < 200) labels.assignments[m.key] = {1};
        else if (i < 230) labels.assignments[m.key] = {1, 2};
    }
    auto ds = build_binary_dataset(labels, 0, store);
    EXPECT_EQ(ds.train_pos.size(), 36u);
    EXPECT_EQ(ds.val_pos.size(), 4u);
    EXPECT_EQ(ds.train_neg.size() + ds.val_neg.size(), 40u);
    std::set<std::size_t> seen;
    for (auto* v : {&ds.train_pos, &ds.val_pos, &ds.train_neg, &ds.val_neg})
        for (auto r : *v) EXPECT_TRUE(seen.insert(r).second);
    for (auto r : ds.train_pos) EXPECT_LT(r, 40u);
    for (auto r : ds.train_neg) EXPECT_GE(r, 40u);
    // strata proportional to their pools (190 of concept 1 first, 70 unlabelled): 29 + 11
    std::size_t unlabelled = 0;
    for (auto* v : {&ds.train_neg, &ds.val_neg})
        for (auto r : *v) unlabelled += r >= 230;
    EXPECT_EQ(unlabelled, 11u);
    // same seed, same dataset
    auto again = build_binary_dataset(labels, 0, store);
    EXPECT_EQ(again.train_neg, ds.train_neg);
    EXPECT_NO_THROW(build_binary_dataset(labels, 2, store));
    EXPECT_THROW(build_binary_dataset(labels, 9, store), NotFound);
    DatasetConfig strict;
    strict.min_samples = 31;
    try {
        build_binary_dataset(labels, 2, store, strict);
        FAIL() << "expected SkipConcept";
    } catch (const SkipConcept& e) {
        EXPECT_EQ(e.positives(), 30u);
        EXPECT_EQ(e.concept_id(), 2);
    }
}

TEST(Platt, StationaryPointOfNll) {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> nd;
    std::vector<double> m;
    std::vector<int> y;
    for (int i = 0; i < 400; ++i) {
        int label = i % 2;
        m.push_back(nd(rng) + (label ? 1.0 : -1.0));
        y.push_back(label);
    }
    auto p = fit_platt(m, y);
    EXPECT_GT(p.a, 0.0);
    // central differences of the objective vanish at the fit
    const double h = 1e-5;
    double ga = (platt_nll(m, y, {p.a + h, p.b}) - platt_nll(m, y, {p.a - h, p.b})) / (2 * h);
    double gb = (platt_nll(m, y, {p.a, p.b + h}) - platt_nll(m, y, {p.a, p.b - h})) / (2 * h);
    EXPECT_NEAR(ga, 0.0, 1e-3);
    EXPECT_NEAR(gb, 0.0, 1e-3);
    double f = platt_nll(m, y, p);
    for (double da : {-0.1, 0.1})
        for (double db : {-0.1, 0.1}) EXPECT_LT(f, platt_nll(m, y, {p.a + da, p.b + db}));
}

TEST(Platt, AntiCorrelatedFallsBackToConstant) {
    std::vector<double> m{2.0, 1.0, -1.0, -2.0};
    std::vector<int> y{0, 0, 1, 1};
    auto p = fit_platt(m, y);
    EXPECT_EQ(p.a, 0.0);
    EXPECT_NEAR(1.0 / (1.0 + std::exp(-p.b)), 0.5, 1e-12);
}

TEST(Sgd, LearnsSeparableDirectionAndL1Sparsifies) {
    std::mt19937_64 rng(42);
    auto pos = cloud(rng, 200, 20, 3.0, 0.5), neg = cloud(rng, 200, 20, -3.0, 0.5);
    SgdConfig cfg;
    auto lin = train_sgd_logistic(pos.view(), neg.view(), 20, cfg);
    EXPECT_GT(lin.weights[0], 0.0);
    double rest = 0;
    for (int i = 1; i < 20; ++i) rest = std::max(rest, std::abs(lin.weights[i]));
    EXPECT_GT(lin.weights[0], 5 * rest);
    cfg.l1 = 0.5;
    auto sparse = train_sgd_logistic(pos.view(), neg.view(), 20, cfg);
    int zeros = 0;
    for (int i = 1; i < 20; ++i) zeros += sparse.weights[i] == 0.0;
    EXPECT_GE(zeros, 15);
    EXPECT_THROW(train_sgd_logistic({}, neg.view(), 20, cfg), DataError);
}

TEST(Prober, SeparableClustersReachHighMacroF1) {
    std::mt19937_64 rng(42);
    const std::size_t dim = 16;
    // centres 2 apart with small noise: the gap between the clusters is well above 1
    auto pos = cloud(rng, 200, dim, 1.0, 0.1), neg = cloud(rng, 200, dim, -1.0, 0.1);
    auto trained = train_prober(3, pos.view(), neg.view(), dim);
    auto tpos = cloud(rng, 500, dim, 1.0, 0.1), tneg = cloud(rng, 500, dim, -1.0, 0.1);
    std::vector<int> pred, truth;
    for (const auto& r : tpos.rows) {
        pred.push_back(probe(trained.prober, r).probability > 0.5);
        truth.push_back(1);
    }
    for (const auto& r : tneg.rows) {
        pred.push_back(probe(trained.prober, r).probability > 0.5);
        truth.push_back(0);
    }
    EXPECT_GE(eval::macro_f1(pred, truth, 2), 0.99);
    // the concept vector is unit norm and points along the separating axis
    double n2 = 0;
    for (float v : trained.prober.cav) n2 += double(v) * v;
    EXPECT_NEAR(n2, 1.0, 1e-6);
    EXPECT_GT(trained.prober.cav[0], 0.9);
}

TEST(Prober, IdenticalFoldsHaveZeroUncertainty) {
    std::mt19937_64 rng(42);
    auto pos = cloud(rng, 50, 4, 1.0, 1.0), neg = cloud(rng, 50, 4, -1.0, 1.0);
    auto lin = train_sgd_logistic(pos.view(), neg.view(), 4, {});
    CalibratedFold f;
    for (double w : lin.weights) f.weights.push_back(float(w));
    f.bias = float(lin.bias);
    f.platt_a = 1.3f;
    f.platt_b = -0.2f;
    ConceptProber p;
    p.folds.fill(f);
    p.cav = {1, 0, 0, 0};
    for (const auto& r : pos.rows) EXPECT_EQ(probe(p, r).uncertainty, 0.0);
    EXPECT_THROW(probe(p, std::vector<float>(3)), ConfigError);
}

TEST(Prober, BundleOrderingAndRoundTrip) {
    testkit::TempDir dir;
    std::mt19937_64 rng(42);
    auto pos = cloud(rng, 60, 6, 1.0, 1.0), neg = cloud(rng, 60, 6, -1.0, 1.0);
    ProberBundle bundle;
    auto a = train_prober(5, pos.view(), neg.view(), 6).prober;
    auto b = a;
    b.concept_id = 2;
    auto c = train_prober(7, neg.view(), pos.view(), 6).prober;
    bundle.add(a);
    bundle.add(b);
    bundle.add(c);
    EXPECT_THROW(bundle.add(a), ConfigError);
    auto ranked = probe_all(bundle, pos.rows[0]);
    ASSERT_EQ(ranked.size(), 3u);
    for (std::size_t i = 1; i < ranked.size(); ++i) {
        EXPECT_GE(ranked[i - 1].probability, ranked[i].probability);
        if (ranked[i - 1].probability == ranked[i].probability) {
            EXPECT_LT(ranked[i - 1].concept_id, ranked[i].concept_id);
        }
    }
    EXPECT_EQ(ranked[0].concept_id, 2);  // ties with 5, smaller id first
    EXPECT_EQ(ranked[1].concept_id, 5);

    write_bundle(dir / "p.prbr", bundle);
    auto back = read_bundle(dir / "p.prbr");
    ASSERT_EQ(back.probers().size(), 3u);
    EXPECT_EQ(back.dim(), 6u);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& x = bundle.probers()[i];
        const auto& y = back.probers()[i];
        EXPECT_EQ(x.concept_id, y.concept_id);
        EXPECT_EQ(x.cav, y.cav);
        for (int f = 0; f < kFolds; ++f) {
            EXPECT_EQ(x.folds[f].weights, y.folds[f].weights);
            EXPECT_EQ(x.folds[f].platt_a, y.folds[f].platt_a);
            EXPECT_EQ(x.folds[f].bias, y.folds[f].bias);
        }
    }
    EXPECT_THROW(probe_all(ProberBundle{}, pos.rows[0]), MissingArtifact);
}

TEST(Prober, MlpSolvesXorWhereLinearCannot) {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> nd(0.0, 0.15);
    auto xor_rows = [&](std::size_t n, bool positive) {
        Cloud c;
        for (std::size_t i = 0; i < n; ++i) {
            int q = int(i % 2);
            double sx = q ? 1.0 : -1.0, sy = positive ? sx : -sx;
            c.rows.push_back({float(sx + nd(rng)), float(sy + nd(rng))});
        }
        return c;
    };
    auto pos = xor_rows(200, true), neg = xor_rows(200, false);
    auto vpos = xor_rows(40, true), vneg = xor_rows(40, false);
    MlpConfig cfg;
    cfg.hidden = 16;
    cfg.learning_rate = 1e-2;
    auto mlp = train_mlp_baseline(1, pos.view(), neg.view(), 2, vpos.view(), vneg.view(), cfg);
    auto lin = train_prober(1, pos.view(), neg.view(), 2).prober;
    auto tpos = xor_rows(300, true), tneg = xor_rows(300, false);
    double mlp_acc = 0, lin_acc = 0;
    for (const auto& r : tpos.rows) {
        mlp_acc += mlp.probability(r) > 0.5;
        lin_acc += probe(lin, r).probability > 0.5;
    }
    for (const auto& r : tneg.rows) {
        mlp_acc += mlp.probability(r) <= 0.5;
        lin_acc += probe(lin, r).probability <= 0.5;
    }
    mlp_acc /= 600;
    lin_acc /= 600;
    EXPECT_GE(mlp_acc, 0.95);
    EXPECT_GE(mlp_acc - lin_acc, 0.2);
    EXPECT_GT(mlp.temperature, 0.0);
}

TEST(Labels, CsvRoundTripAndValidation) {
    testkit::TempDir dir;
    ConceptLabelSet l;
    l.concepts = {{0, "convective, cell", ConceptSource::Synth}, {4, "front", ConceptSource::Posthoc}};
    l.assignments[{1'609'459'200, 3}] = {0, 4};
    l.assignments[{1'609'459'800, 1}] = {4};
    write_labels(dir / "l.csv", dir / "c.csv", l);
    auto back = read_labels(dir / "l.csv", dir / "c.csv");
    ASSERT_EQ(back.concepts.size(), 2u);
    EXPECT_EQ(back.concepts[0].name, "convective, cell");
    EXPECT_EQ(back.concepts[1].source, ConceptSource::Posthoc);
    EXPECT_EQ(back.assignments, l.assignments);
    l.assignments[{0, 1}] = {9};
    EXPECT_THROW(l.validate(), DataError);
    EXPECT_EQ(parse_source(to_string(ConceptSource::Kmeans)), ConceptSource::Kmeans);
}
