#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rainex/binary_io.hpp"
#include "rainex/model.hpp"
#include "rainex/preprocess.hpp"

namespace rainex::features {

inline constexpr int kSegmentSide = 9;
inline constexpr int kSegmentCells = kSegmentSide * kSegmentSide;

/// Bottleneck channels that activate at least once over a dataset.
struct ChannelPruneMap {
    std::vector<std::uint32_t> active;  // strictly increasing
    std::uint32_t total_channels = 0;

    void validate() const;
    bool operator==(const ChannelPruneMap&) const = default;
};

/// Streaming form of compute_prune_map: feed feature maps one at a time.
class PruneAccumulator {
public:
    void add(const model::FeatureMap& feature);
    ChannelPruneMap finish() const;
    std::size_t count() const { return count_; }

private:
    std::vector<double> channel_max_;
    std::size_t count_ = 0;
};

ChannelPruneMap compute_prune_map(std::span<const model::FeatureMap> features);

/// (timestamp, segment id) identifies a segment across the whole pipeline.
struct SegmentKey {
    Timestamp timestamp = 0;
    std::int32_t segment_id = 0;
    auto operator<=>(const SegmentKey&) const = default;
};

struct SegmentMeta {
    SegmentKey key;
    preprocess::BBox bbox;
    std::int64_t pixels = 0;
};

struct SegmentFeature {
    std::vector<float> values;
    SegmentMeta meta;

    std::vector<bool> activation_state() const;
};

/// Crops one segment out of the bottleneck, keeps active channels and resizes to 9x9.
SegmentFeature extract_segment_feature(const model::FeatureMap& feature,
                                       const preprocess::SegmentMask& mask,
                                       std::int32_t segment_id, const ChannelPruneMap& prune);

/// Adjoint of extract_segment_feature: maps a direction in segment-feature space back to a
/// unit-norm direction in bottleneck space. A null mask means the whole bottleneck frame.
model::FeatureMap lift_direction(std::span<const float> direction, model::Shape3 bottleneck,
                                 const ChannelPruneMap& prune,
                                 const preprocess::SegmentMask* mask = nullptr,
                                 std::int32_t segment_id = 0);

/// Row-major N x dim matrix of segment features with their metadata.
class FeatureStore {
public:
    FeatureStore() = default;
    explicit FeatureStore(std::uint32_t dim) : dim_(dim) {}

    void add(const SegmentFeature& f);
    void add(std::span<const float> values, const SegmentMeta& meta);

    std::uint32_t dim() const { return dim_; }
    std::size_t size() const { return meta_.size(); }
    std::span<const float> row(std::size_t i) const {
        return {values_.data() + i * dim_, dim_};
    }
    const SegmentMeta& meta(std::size_t i) const { return meta_[i]; }
    const std::vector<SegmentMeta>& metas() const { return meta_; }
    const std::vector<float>& values() const { return values_; }
    /// Row index for a key, or -1.
    std::ptrdiff_t find(const SegmentKey& key) const;

private:
    std::uint32_t dim_ = 0;
    std::vector<float> values_;
    std::vector<SegmentMeta> meta_;
};

// FSTR feature store files.
void write_feature_store(const std::filesystem::path& path, const FeatureStore& store);
FeatureStore read_feature_store(const std::filesystem::path& path);
void write_feature_store(io::BinaryWriter& out, const FeatureStore& store);
FeatureStore read_feature_store(io::BinaryReader& in);

// PRUN channel prune map files.
void write_prune_map(const std::filesystem::path& path, const ChannelPruneMap& prune);
ChannelPruneMap read_prune_map(const std::filesystem::path& path);

}  // namespace rainex::features
