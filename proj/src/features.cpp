#include "rainex/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rainex/binary_io.hpp"
#include "rainex/error.hpp"

namespace rainex::features {

void ChannelPruneMap::validate() const {
    for (std::size_t i = 0; i < active.size(); ++i) {
        if (active[i] >= total_channels) throw ConfigError("prune index out of range");
        if (i && active[i] <= active[i - 1]) throw ConfigError("prune indices not increasing");
    }
}

void PruneAccumulator::add(const model::FeatureMap& f) {
    const auto c = std::size_t(f.shape.channels);
    if (count_ == 0) {
        channel_max_.assign(c, -std::numeric_limits<double>::infinity());
    } else if (c != channel_max_.size()) {
        throw ConfigError("feature maps in one stream must share a channel count");
    }
    const std::size_t plane = std::size_t(f.shape.height) * f.shape.width;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = f.values.data() + ch * plane;
        double m = *std::max_element(p, p + plane);
        channel_max_[ch] = std::max(channel_max_[ch], m);
    }
    ++count_;
}

ChannelPruneMap PruneAccumulator::finish() const {
    if (count_ == 0) throw DataError("cannot compute a prune map from an empty feature stream");
    ChannelPruneMap map;
    map.total_channels = std::uint32_t(channel_max_.size());
    for (std::uint32_t c = 0; c < map.total_channels; ++c)
        if (channel_max_[c] > 0.0) map.active.push_back(c);
    return map;
}

ChannelPruneMap compute_prune_map(std::span<const model::FeatureMap> features) {
    PruneAccumulator acc;
    for (const auto& f : features) acc.add(f);
    return acc.finish();
}

std::vector<bool> SegmentFeature::activation_state() const {
    std::vector<bool> s(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) s[i] = values[i] > 0.0f;
    return s;
}

namespace {

// Bottleneck-resolution window and per-cell membership for one segment.
struct Window {
    int row0 = 0, col0 = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> inside;  // rows x cols
};

Window segment_window(model::Shape3 shape, const preprocess::SegmentMask* mask,
                      std::int32_t segment_id) {
    Window win;
    if (!mask) {
        win.rows = shape.height;
        win.cols = shape.width;
        win.inside.assign(std::size_t(win.rows) * win.cols, 1);
        return win;
    }
    const auto* seg = mask->find(segment_id);
    if (!seg) throw NotFound("unknown segment id " + std::to_string(segment_id));
    if (seg->bbox.rows() == 0 || seg->bbox.cols() == 0)
        throw DataError("degenerate bounding box for segment " + std::to_string(segment_id));
    if (mask->height % shape.height || mask->width % shape.width ||
        mask->height / shape.height != mask->width / shape.width)
        throw ConfigError("mask resolution does not map onto the bottleneck by an integer scale");
    const int s = mask->height / shape.height;
    // round outward
    win.row0 = int(seg->bbox.row0) / s;
    win.col0 = int(seg->bbox.col0) / s;
    int row1 = (int(seg->bbox.row1) + s - 1) / s;
    int col1 = (int(seg->bbox.col1) + s - 1) / s;
    win.rows = row1 - win.row0;
    win.cols = col1 - win.col0;
    win.inside.assign(std::size_t(win.rows) * win.cols, 0);
    for (int r = int(seg->bbox.row0); r < int(seg->bbox.row1); ++r)
        for (int c = int(seg->bbox.col0); c < int(seg->bbox.col1); ++c)
            if (mask->at(r, c) == segment_id)
                win.inside[std::size_t(r / s - win.row0) * win.cols + (c / s - win.col0)] = 1;
    return win;
}

}  // namespace

SegmentFeature extract_segment_feature(const model::FeatureMap& feature,
                                       const preprocess::SegmentMask& mask,
                                       std::int32_t segment_id, const ChannelPruneMap& prune) {
    if (prune.total_channels != std::uint32_t(feature.shape.channels))
        throw ConfigError("prune map channel count does not match the feature map");
    Window win = segment_window(feature.shape, &mask, segment_id);
    const auto taps = model::bilinear_taps(win.rows, win.cols, kSegmentSide, kSegmentSide);

    SegmentFeature out;
    out.values.resize(prune.active.size() * kSegmentCells);
    std::vector<double> crop(std::size_t(win.rows) * win.cols);
    std::vector<double> resized(kSegmentCells);
    for (std::size_t a = 0; a < prune.active.size(); ++a) {
        int ch = int(prune.active[a]);
        for (int r = 0; r < win.rows; ++r)
            for (int c = 0; c < win.cols; ++c) {
                std::size_t i = std::size_t(r) * win.cols + c;
                crop[i] = win.inside[i] ? feature.at(ch, win.row0 + r, win.col0 + c) : 0.0;
            }
        model::resample(taps, crop, resized);
        for (int i = 0; i < kSegmentCells; ++i)
            out.values[a * kSegmentCells + i] = float(resized[i]);
    }
    const auto* seg = mask.find(segment_id);
    out.meta.key = {mask.frame_time, segment_id};
    out.meta.bbox = seg->bbox;
    out.meta.pixels = seg->pixels;
    return out;
}

model::FeatureMap lift_direction(std::span<const float> direction, model::Shape3 bottleneck,
                                 const ChannelPruneMap& prune,
                                 const preprocess::SegmentMask* mask, std::int32_t segment_id) {
    if (direction.size() != prune.active.size() * kSegmentCells)
        throw ConfigError("direction length does not match the pruned segment dimension");
    if (prune.total_channels != std::uint32_t(bottleneck.channels))
        throw ConfigError("prune map channel count does not match the bottleneck");
    Window win = segment_window(bottleneck, mask, segment_id);
    const auto taps = model::bilinear_taps(win.rows, win.cols, kSegmentSide, kSegmentSide);
    auto out = model::FeatureMap::zeros(bottleneck);
    for (std::size_t a = 0; a < prune.active.size(); ++a) {
        int ch = int(prune.active[a]);
        for (int i = 0; i < kSegmentCells; ++i) {
            double g = direction[a * kSegmentCells + i];
            if (g == 0.0) continue;
            for (const auto& [src, wgt] : taps.taps[i]) {
                if (!win.inside[src]) continue;
                int r = int(src) / win.cols, c = int(src) % win.cols;
                out.at(ch, win.row0 + r, win.col0 + c) += wgt * g;
            }
        }
    }
    double norm = 0.0;
    for (double v : out.values) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw DataError("direction vanishes after lifting to the bottleneck");
    for (double& v : out.values) v /= norm;
    return out;
}

void FeatureStore::add(const SegmentFeature& f) { add(f.values, f.meta); }

void FeatureStore::add(std::span<const float> values, const SegmentMeta& meta) {
    if (meta_.empty() && dim_ == 0) dim_ = std::uint32_t(values.size());
    if (values.size() != dim_)
        throw ConfigError("feature length " + std::to_string(values.size()) +
                          " does not match store dimension " + std::to_string(dim_));
    values_.insert(values_.end(), values.begin(), values.end());
    meta_.push_back(meta);
}

std::ptrdiff_t FeatureStore::find(const SegmentKey& key) const {
    for (std::size_t i = 0; i < meta_.size(); ++i)
        if (meta_[i].key == key) return std::ptrdiff_t(i);
    return -1;
}

void write_feature_store(const std::filesystem::path& path, const FeatureStore& store) {
    io::BinaryWriter out(path);
    write_feature_store(out, store);
    out.commit();
}

FeatureStore read_feature_store(const std::filesystem::path& path) {
    io::BinaryReader in(path);
    auto store = read_feature_store(in);
    in.expect_end();
    return store;
}

void write_feature_store(io::BinaryWriter& out, const FeatureStore& store) {
    out.magic("FSTR");
    out.put<std::uint32_t>(std::uint32_t(store.size()));
    out.put<std::uint32_t>(store.dim());
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& m = store.meta(i);
        out.put<std::int64_t>(m.key.timestamp);
        out.put<std::uint32_t>(std::uint32_t(m.key.segment_id));
        out.put<std::uint32_t>(m.bbox.row0);
        out.put<std::uint32_t>(m.bbox.col0);
        out.put<std::uint32_t>(m.bbox.row1);
        out.put<std::uint32_t>(m.bbox.col1);
        out.put<std::int64_t>(m.pixels);
        out.put_array<float>(store.row(i));
    }
}

FeatureStore read_feature_store(io::BinaryReader& in) {
    in.expect_magic("FSTR");
    auto count = in.get<std::uint32_t>();
    auto dim = in.get<std::uint32_t>();
    FeatureStore store(dim);
    std::vector<float> row(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        SegmentMeta m;
        m.key.timestamp = in.get<std::int64_t>();
        m.key.segment_id = std::int32_t(in.get<std::uint32_t>());
        m.bbox.row0 = in.get<std::uint32_t>();
        m.bbox.col0 = in.get<std::uint32_t>();
        m.bbox.row1 = in.get<std::uint32_t>();
        m.bbox.col1 = in.get<std::uint32_t>();
        m.pixels = in.get<std::int64_t>();
        in.get_array<float>(row);
        store.add(row, m);
    }
    return store;
}

void write_prune_map(const std::filesystem::path& path, const ChannelPruneMap& prune) {
    prune.validate();
    io::BinaryWriter out(path);
    out.magic("PRUN");
    out.put<std::uint32_t>(prune.total_channels);
    out.put<std::uint32_t>(std::uint32_t(prune.active.size()));
    out.put_array<std::uint32_t>(prune.active);
    out.commit();
}

ChannelPruneMap read_prune_map(const std::filesystem::path& path) {
    io::BinaryReader in(path);
    in.expect_magic("PRUN");
    ChannelPruneMap p;
    p.total_channels = in.get<std::uint32_t>();
    p.active.resize(in.get<std::uint32_t>());
    in.get_array<std::uint32_t>(p.active);
    in.expect_end();
    p.validate();
    return p;
}

}  // namespace rainex::features
