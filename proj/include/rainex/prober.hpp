#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "rainex/error.hpp"
#include "rainex/features.hpp"

namespace rainex::prober {

using features::SegmentKey;

enum class ConceptSource { Posthoc, Workflow, Kmeans, Gmm, Som, Synth };

std::string to_string(ConceptSource s);
ConceptSource parse_source(const std::string& text);

struct Concept {
    int id = 0;
    std::string name;
    ConceptSource source = ConceptSource::Synth;
};

/// Concept dictionary plus segment -> concept assignments.
struct ConceptLabelSet {
    std::vector<Concept> concepts;
    std::map<SegmentKey, std::set<int>> assignments;

    const Concept* find(int id) const;
    /// Throws DataError if an assignment names an unknown concept.
    void validate() const;
};

/// Label CSV `timestamp,segment_id,concept_id` (ISO-8601 timestamps) and dictionary CSV
/// `concept_id,name,source`.
ConceptLabelSet read_labels(const std::filesystem::path& labels_csv,
                            const std::filesystem::path& concepts_csv);
void write_labels(const std::filesystem::path& labels_csv,
                  const std::filesystem::path& concepts_csv, const ConceptLabelSet& labels);

/// Raised when a concept has too few positives to train; carries the count.
class SkipConcept : public Error {
public:
    SkipConcept(int concept_id, std::size_t positives, std::size_t required);
    int concept_id() const { return concept_id_; }
    std::size_t positives() const { return positives_; }

private:
    int concept_id_;
    std::size_t positives_;
};

struct DatasetConfig {
    std::size_t min_samples = 20;
    double negative_ratio = 1.0;
    double validation_fraction = 0.1;
    std::uint64_t seed = 42;
};

/// Row indices into a FeatureStore.
struct BinaryDataset {
    int concept_id = 0;
    std::vector<std::size_t> train_pos, train_neg, val_pos, val_neg;
};

/// One-vs-all dataset: every positive row, and a stratified, count-matched negative sample.
BinaryDataset build_binary_dataset(const ConceptLabelSet& labels, int concept_id,
                                   const features::FeatureStore& store,
                                   const DatasetConfig& config = {});

/// Splits n items into (train, validation) counts; validation gets ceil(fraction * n).
std::pair<std::size_t, std::size_t> split_counts(std::size_t n, double validation_fraction);

using RowSet = std::vector<std::span<const float>>;
RowSet gather_rows(const features::FeatureStore& store, std::span<const std::size_t> rows);

inline constexpr int kFolds = 5;

struct CalibratedFold {
    std::vector<float> weights;
    float bias = 0.0f;
    float platt_a = 0.0f;
    float platt_b = 0.0f;

    double margin(std::span<const float> x) const;
    double probability(std::span<const float> x) const;
};

struct ProbeResult {
    int concept_id = 0;
    double probability = 0.0;
    double uncertainty = 0.0;
};

/// Five calibrated linear members and the concept activation vector.
struct ConceptProber {
    int concept_id = 0;
    std::array<CalibratedFold, kFolds> folds;
    std::vector<float> cav;

    std::size_t dim() const { return cav.size(); }
};

struct SgdConfig {
    double l1 = 1e-4;
    int max_epochs = 50;
    double eta0 = 0.01;
    double power_t = 0.5;
    double tol = 1e-3;
    int n_iter_no_change = 5;
    std::uint64_t seed = 42;
};

struct LinearModel {
    std::vector<double> weights;
    double bias = 0.0;
    int epochs = 0;
    bool converged = false;
};

/// Logistic loss + L1 via SGD with inverse-scaling steps and cumulative L1 clipping.
LinearModel train_sgd_logistic(const RowSet& positives, const RowSet& negatives, std::size_t dim,
                               const SgdConfig& config);

struct PlattParams {
    double a = 0.0;
    double b = 0.0;
};

/// Fits p = sigmoid(a * margin + b) by Newton's method on Platt's corrected targets.
/// The slope is constrained to a >= 0 so the calibrated probability is monotone in the margin.
PlattParams fit_platt(std::span<const double> margins, std::span<const int> labels);
/// Negative log-likelihood of the corrected targets under (a, b).
double platt_nll(std::span<const double> margins, std::span<const int> labels, PlattParams p);

struct TrainedProber {
    ConceptProber prober;
    bool converged = true;
    std::array<int, kFolds> epochs{};
};

/// Five-fold calibrated ensemble: train on four folds, calibrate on the held-out one.
TrainedProber train_prober(int concept_id, const RowSet& positives, const RowSet& negatives,
                           std::size_t dim, const SgdConfig& config = {});

ProbeResult probe(const ConceptProber& prober, std::span<const float> feature);

/// Probers sharing one feature dimension.
class ProberBundle {
public:
    ProberBundle() = default;
    explicit ProberBundle(std::uint32_t dim) : dim_(dim) {}

    void add(ConceptProber p);
    std::uint32_t dim() const { return dim_; }
    const std::vector<ConceptProber>& probers() const { return probers_; }
    const ConceptProber* find(int concept_id) const;
    bool empty() const { return probers_.empty(); }

private:
    std::uint32_t dim_ = 0;
    std::vector<ConceptProber> probers_;
};

/// All probers on one feature, by descending probability then ascending concept id.
std::vector<ProbeResult> probe_all(const ProberBundle& bundle, std::span<const float> feature);

// PRBR bundle files.
void write_bundle(const std::filesystem::path& path, const ProberBundle& bundle);
ProberBundle read_bundle(const std::filesystem::path& path);

struct MlpConfig {
    int hidden = 64;
    double learning_rate = 1e-3;
    int epochs = 200;
    int batch_size = 32;
    std::uint64_t seed = 42;
};

/// Two affine layers with a clamp between them and a temperature-scaled sigmoid output.
struct MlpProber {
    int concept_id = 0;
    std::size_t dim = 0;
    int hidden = 0;
    std::vector<double> w1, b1, w2;  // w1: hidden x dim
    double b2 = 0.0;
    double temperature = 1.0;

    double logit(std::span<const float> x) const;
    double probability(std::span<const float> x) const;
};

/// Adam on binary cross-entropy; temperature fitted on the validation rows by minimising NLL.
MlpProber train_mlp_baseline(int concept_id, const RowSet& positives, const RowSet& negatives,
                             std::size_t dim, const RowSet& val_positives,
                             const RowSet& val_negatives, const MlpConfig& config = {});

}  // namespace rainex::prober
