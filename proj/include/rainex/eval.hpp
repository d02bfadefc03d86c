#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "rainex/features.hpp"
#include "rainex/model.hpp"
#include "rainex/nn_engine.hpp"
#include "rainex/prober.hpp"
#include "rainex/rdr.hpp"

namespace rainex::eval {

/// Mean over classes of 2PR/(P+R); a class with no true and no predicted member scores 0.
double macro_f1(std::span<const int> predictions, std::span<const int> labels, int classes);
double accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Mean over the 7 accumulated rain thresholds of Hit / (Hit + (Miss + FalseAlarm) / 2).
/// A threshold with no truth and no prediction counts as 1.
double modified_f1(const model::ClassMap& prediction, const model::ClassMap& truth);
inline double modified_f1_loss(const model::ClassMap& p, const model::ClassMap& t) {
    return 1.0 - modified_f1(p, t);
}
/// Same with the predicted threshold masks replaced by softmax exceedance probabilities.
double soft_modified_f1(const model::Logits& logits, const model::ClassMap& truth);

/// |correct among the first k| / k; a retrieved item is correct when it shares a label with the
/// query. Short lists count the missing entries as incorrect.
double precision_at_k(std::span<const std::set<int>> retrieved, const std::set<int>& query,
                      std::size_t k);

/// Feature rows with planted concept labels: each concept owns a block of support coordinates
/// that are elevated on its members.
struct PlantedConfig {
    std::size_t rows = 3000;
    std::size_t queries = 30;
    std::uint32_t dim = 2000;
    int concepts = 10;
    std::uint32_t support = 200;
    double background_mean = -0.5;
    double signal_mean = 1.0;
    double noise = 1.0;
    std::uint64_t seed = 42;
};

/// Indexed rows are kept dimension-major (dim x rows), ready for nn::SearchIndex::from_columns.
struct PlantedCorpus {
    std::uint32_t dim = 0;
    std::vector<float> columns;
    std::vector<features::SegmentMeta> metas;
    features::FeatureStore queries;  // held-out query rows
    prober::ConceptLabelSet labels;  // covers indexed and query rows
    std::vector<std::vector<std::uint32_t>> support;

    std::size_t size() const { return metas.size(); }
    std::vector<float> row(std::size_t i) const;
};

PlantedCorpus make_planted_corpus(const PlantedConfig& config);

struct BenchConfig {
    std::vector<std::string> methods{"full", "pca", "pcnse"};
    std::vector<std::size_t> dims{15, 100, 300, 1000};
    std::size_t k1 = 3;
    std::size_t repeats = 1;          // timing passes per query; the median is reported
    unsigned threads = 1;
    std::size_t prober_rows = 2000;   // rows per concept used to train probers (0 = all)
    std::uint64_t seed = 42;
};

struct BenchRow {
    std::string method;
    std::size_t dims = 0;
    double median_seconds = 0.0;
    double mean_seconds = 0.0;
    std::array<double, 3> precision{};      // P@3, P@5, P@10
    std::array<double, 3> precision_std{};
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::string environment;
    std::uint64_t seed = 0;
    std::size_t rows_indexed = 0;
    std::uint32_t feature_dim = 0;
    std::size_t queries = 0;

    const BenchRow* find(const std::string& method, std::size_t dims) const;
};

/// CPU model and logical core count.
std::string machine_descriptor();

/// Probers and per-d PC maps fitted on a per-concept subsample of the corpus rows.
struct CorpusModels {
    prober::ProberBundle probers;
    std::map<std::size_t, rdr::PrincipalComponentMap> pc_maps;  // by d
};
CorpusModels fit_corpus_models(const PlantedCorpus& corpus, const BenchConfig& config);

/// Moves the corpus matrix into a search index.
nn::SearchIndex index_corpus(PlantedCorpus& corpus,
                             std::shared_ptr<const prober::ProberBundle> probers);

/// Times every (method, d) pair over the corpus queries and scores P@{3,5,10}.
BenchReport run_benchmark(const nn::SearchIndex& index, const PlantedCorpus& corpus,
                          const CorpusModels& models, const BenchConfig& config);

std::string to_markdown(const BenchReport& report);
std::string to_json(const BenchReport& report);

}  // namespace rainex::eval
