#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "json.hpp"
#include "rainex/attribution.hpp"
#include "rainex/config.hpp"
#include "rainex/features.hpp"
#include "rainex/model.hpp"
#include "rainex/nn_engine.hpp"
#include "rainex/preprocess.hpp"
#include "rainex/prober.hpp"
#include "rainex/synthetic.hpp"

namespace rainex::pipeline {

using config::PipelineConfig;

inline constexpr int kDownsample = 2;
/// Lead time of the ground-truth frame used for importance scoring.
inline constexpr Timestamp kTruthLead = kHour;

/// "YYYYMMDDTHHMM.hsr"
std::string frame_file_name(Timestamp t);

/// HSR1 frames in one directory, decoded and downsampled to model resolution on access.
class RadarArchive {
public:
    explicit RadarArchive(std::filesystem::path dir);

    const std::vector<Timestamp>& times() const { return times_; }
    bool has(Timestamp t) const;
    preprocess::RadarFrame frame(Timestamp t) const;
    /// Times whose six preceding 10-minute frames are all present.
    std::vector<Timestamp> reference_times() const;
    preprocess::ModelInput input(Timestamp t) const;
    preprocess::SegmentMask segments(Timestamp t) const;

private:
    std::filesystem::path dir_;
    std::vector<Timestamp> times_;
};

struct GenDataSummary {
    std::size_t frames = 0;
    std::size_t episodes = 0;
    std::size_t labelled_segments = 0;
};
GenDataSummary gen_data(const PipelineConfig& config, synth::SceneConfig scene);

struct ExtractSummary {
    std::size_t references = 0;
    std::size_t segments = 0;
    std::size_t active_channels = 0;
    std::uint32_t dim = 0;
};
ExtractSummary extract(const PipelineConfig& config);

struct ConceptTrainStats {
    int concept_id = 0;
    std::size_t train_rows = 0;
    std::size_t validation_rows = 0;
    double validation_accuracy = 0.0;
    double validation_macro_f1 = 0.0;
    bool converged = true;
};
struct TrainSummary {
    std::vector<ConceptTrainStats> trained;
    std::vector<prober::SkipConcept> skipped;
};
TrainSummary train_probers(const PipelineConfig& config);

struct PcSummary {
    std::size_t concepts = 0;
    std::uint32_t d = 0;
    bool clamped = false;
    std::vector<prober::SkipConcept> skipped;
};
PcSummary build_pc(const PipelineConfig& config);

struct IndexSummary {
    std::size_t rows = 0;
    std::uint32_t dim = 0;
};
IndexSummary build_index(const PipelineConfig& config);

/// Loaded artifacts for interactive use. Everything is read-only after load().
class Workspace {
public:
    explicit Workspace(PipelineConfig config);

    const PipelineConfig& config() const { return config_; }
    const RadarArchive& archive() const;
    const model::ToyModel& model() const;
    const features::ChannelPruneMap& prune() const;
    const prober::ConceptLabelSet& labels() const;
    bool has_index() const { return index_ != nullptr; }
    const nn::SearchIndex& index() const;
    const prober::ProberBundle& probers() const;

    /// Feature of a segment: from the index when present, else computed from the archive.
    /// Unknown frames or segments raise NotFound.
    features::SegmentFeature segment_feature(Timestamp t, std::int32_t segment_id) const;

    nn::NeighborResult query(Timestamp t, std::int32_t segment_id, std::size_t k1,
                             std::size_t k2, double min_gap_days) const;

    /// The concept's CAV lifted onto the segment's footprint in bottleneck space.
    std::vector<attribution::Perturbation> perturb(Timestamp t, std::int32_t segment_id,
                                                   int concept_id,
                                                   const std::vector<double>& alphas) const;

    /// Samples with a ground-truth frame one hour after the reference time.
    std::vector<attribution::Sample> importance_samples() const;
    attribution::ImportanceReport importance(attribution::WrapperKind wrapper) const;

    std::filesystem::path report_path(attribution::WrapperKind wrapper,
                                      const std::string& extension) const;

private:
    PipelineConfig config_;
    std::unique_ptr<RadarArchive> archive_;
    std::unique_ptr<model::ToyModel> model_;
    std::unique_ptr<features::ChannelPruneMap> prune_;
    std::unique_ptr<prober::ConceptLabelSet> labels_;
    std::unique_ptr<nn::SearchIndex> index_;
    std::shared_ptr<const prober::ProberBundle> probers_;
};

model::ToyModel load_model(const PipelineConfig& config, const RadarArchive& archive);

// JSON views shared by the CLI and the service.
nlohmann::json to_json(const features::SegmentMeta& meta);
nlohmann::json to_json(const nn::NeighborResult& result, const prober::ConceptLabelSet& labels);
nlohmann::json to_json(const model::ClassMap& map);
std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Binary PPM with the 8-class palette.
void write_class_ppm(const std::filesystem::path& path, const model::ClassMap& map);
/// "#rrggbb" colours of the 8 rain classes, lightest first.
const std::array<const char*, model::kNumClasses>& class_palette();

}  // namespace rainex::pipeline
