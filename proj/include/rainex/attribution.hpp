#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rainex/features.hpp"
#include "rainex/model.hpp"
#include "rainex/prober.hpp"

namespace rainex::attribution {

enum class WrapperKind { LogitSum, MaskedSum, MaskedScaledSum, MaskedPixelCount, Loss };
inline constexpr std::array<WrapperKind, 5> kWrappers{
    WrapperKind::LogitSum, WrapperKind::MaskedSum, WrapperKind::MaskedScaledSum,
    WrapperKind::MaskedPixelCount, WrapperKind::Loss};

std::string to_string(WrapperKind kind);
/// Accepts the enum names and their snake_case forms (e.g. masked_sum).
WrapperKind parse_wrapper(const std::string& text);

struct WrapperValue {
    double value = 0.0;
    bool empty_mask = false;
};

/// Pixels whose argmax class is k.
std::vector<std::uint8_t> class_mask(const model::Logits& logits, int k);

/// Aggregates class-k logits into one scalar, with the mask taken from these logits.
/// The Loss wrapper ignores k and needs the truth map.
WrapperValue wrap(WrapperKind kind, const model::Logits& logits, int k,
                  const model::ClassMap* truth = nullptr);
/// Same with a given pixel mask.
WrapperValue wrap(WrapperKind kind, const model::Logits& logits, int k,
                  std::span<const std::uint8_t> mask, const model::ClassMap* truth = nullptr);

inline constexpr double kDefaultEpsilon = 1e-3;

/// Forward difference of the wrapped class-k output along `direction` (unit norm). Masked
/// wrappers keep the argmax mask of the unperturbed prediction in both evaluations.
double sensitivity(const model::SegmentationModel& model, const model::FeatureMap& base,
                   const model::FeatureMap& direction, int k, WrapperKind wrapper,
                   double epsilon = kDefaultEpsilon, const model::ClassMap* truth = nullptr);
double sensitivity(const model::SegmentationModel& model, const preprocess::ModelInput& input,
                   const model::FeatureMap& direction, int k, WrapperKind wrapper,
                   double epsilon = kDefaultEpsilon, const model::ClassMap* truth = nullptr);

/// Exact directional derivative for affine decoders (LogitSum and MaskedSum only).
std::optional<double> analytic_sensitivity(const model::SegmentationModel& model,
                                           const model::FeatureMap& base,
                                           const model::FeatureMap& direction, int k,
                                           WrapperKind wrapper);

/// An encoded sample and its ground-truth class map.
struct Sample {
    model::FeatureMap feature;
    model::ClassMap truth;
};

std::set<int> truth_classes(const model::ClassMap& truth);

struct ImportanceStat {
    std::optional<double> score;  // empty when no sample has class k
    std::size_t samples = 0;      // |X_k|
    std::size_t positive = 0;     // samples with S > 0
};

/// Fraction of samples containing class k whose sensitivity is positive. The direction is
/// normalized first. For the Loss wrapper every sample counts.
ImportanceStat importance(const model::SegmentationModel& model, std::span<const Sample> samples,
                          const model::FeatureMap& direction, int k, WrapperKind wrapper,
                          double epsilon = kDefaultEpsilon, unsigned threads = 1);

struct Perturbation {
    model::ClassMap baseline;
    model::ClassMap perturbed;
    std::size_t changed_pixels = 0;
};

Perturbation perturb_prediction(const model::SegmentationModel& model,
                                const model::FeatureMap& base, const model::FeatureMap& direction,
                                double alpha);

struct ReportConfig {
    WrapperKind wrapper = WrapperKind::LogitSum;
    std::vector<int> classes{0, 1, 2, 3, 4, 5, 6, 7};
    double epsilon = kDefaultEpsilon;
    bool include_loss = true;
    unsigned threads = 1;
};

struct ImportanceReport {
    struct Row {
        int concept_id = 0;
        std::string concept_name;
        bool skipped = false;                       // no prober
        std::vector<std::optional<double>> scores;  // one per class
        std::optional<double> loss_score;
    };
    WrapperKind wrapper = WrapperKind::LogitSum;
    double epsilon = kDefaultEpsilon;
    std::vector<int> classes;
    std::vector<std::size_t> sample_counts;  // |X_k| per class
    std::size_t loss_samples = 0;
    bool has_loss = false;
    std::vector<Row> rows;
};

/// Concept x class importance with CAVs lifted over the whole bottleneck frame. Dictionary
/// concepts without a prober become skipped rows.
ImportanceReport importance_report(const model::SegmentationModel& model,
                                   std::span<const Sample> samples,
                                   const prober::ProberBundle& probers,
                                   const std::vector<prober::Concept>& concepts,
                                   const features::ChannelPruneMap& prune,
                                   const ReportConfig& config = {});

/// `concept_id,concept_name,class_or_loss,score,n_samples`; undefined scores are empty fields.
void write_report_csv(const std::filesystem::path& path, const ImportanceReport& report);
nlohmann::json to_json(const ImportanceReport& report);
ImportanceReport report_from_json(const nlohmann::json& j);

}  // namespace rainex::attribution
