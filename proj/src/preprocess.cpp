#include "rainex/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <string>

#include "rainex/binary_io.hpp"
#include "rainex/error.hpp"

namespace rainex::preprocess {

namespace {

constexpr int kDr[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int kDc[8] = {-1, 0, 1, -1, 1, -1, 0, 1};

// Affine map (-0.5, 0.5] -> (kRainLow, kRainHigh].
constexpr double kRainSlope = kRainHigh - kRainLow;
constexpr double kRainIntercept = kRainHigh - 0.5 * kRainSlope;

bool is_sentinel(std::int16_t v, const ConversionConfig& config) {
    return std::find(config.sentinels.begin(), config.sentinels.end(), v) != config.sentinels.end();
}

}  // namespace

const SegmentInfo* SegmentMask::find(std::int32_t id) const {
    for (const auto& s : segments)
        if (s.id == id) return &s;
    return nullptr;
}

double rain_rate_from_dbz(double dbz) {
    double z = std::pow(10.0, 0.1 * dbz);
    return std::pow(z / kZrA, 1.0 / kZrB);
}

double dbz_from_rain_rate(double rain) {
    double z = kZrA * std::pow(rain, kZrB);
    return 10.0 * std::log10(z);
}

RadarFrame dbz_to_rainrate(const RawRadar& raw, const GeoExtent& extent,
                           const ConversionConfig& config) {
    if (raw.values.size() != std::size_t(raw.height) * raw.width)
        throw DataError("raw grid size does not match its dimensions");
    RadarFrame f;
    f.timestamp = raw.timestamp;
    f.height = raw.height;
    f.width = raw.width;
    f.extent = extent;
    f.rain.resize(raw.values.size());
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
        std::int16_t v = raw.values[i];
        f.rain[i] = is_sentinel(v, config) ? 0.0 : rain_rate_from_dbz(v / 100.0);
    }
    return f;
}

RadarFrame dbz_to_rainrate(std::span<const double> raw, int height, int width, Timestamp t,
                           const GeoExtent& extent, const ConversionConfig& config) {
    if (raw.size() != std::size_t(height) * width)
        throw DataError("raw grid size does not match its dimensions");
    RadarFrame f;
    f.timestamp = t;
    f.height = height;
    f.width = width;
    f.extent = extent;
    f.rain.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        double v = raw[i];
        if (!std::isfinite(v))
            throw DataError("rejected frame: non-finite raw value at pixel " + std::to_string(i));
        bool sentinel = v == std::trunc(v) && v >= -32768.0 && v <= 32767.0 &&
                        is_sentinel(static_cast<std::int16_t>(v), config);
        f.rain[i] = sentinel ? 0.0 : rain_rate_from_dbz(v / 100.0);
    }
    return f;
}

double normalize_rain(double value) {
    double t = 0.5 * std::tanh(0.01 * (value - kRainMu) / kRainSigma);
    double out = kRainSlope * t + kRainIntercept;
    // tanh saturates to exactly -1 in floating point; keep the lower bound open.
    static const double floor_value = std::nextafter(kRainLow, kRainHigh);
    return std::clamp(out, floor_value, kRainHigh);
}

RadarFrame downsample(const RadarFrame& frame, int factor) {
    if (factor < 1) throw ConfigError("downsample factor must be >= 1");
    if (frame.height % factor != 0 || frame.width % factor != 0)
        throw ConfigError("grid " + std::to_string(frame.height) + "x" + std::to_string(frame.width) +
                          " is not divisible by factor " + std::to_string(factor));
    RadarFrame out;
    out.timestamp = frame.timestamp;
    out.extent = frame.extent;
    out.height = frame.height / factor;
    out.width = frame.width / factor;
    out.rain.assign(std::size_t(out.height) * out.width, 0.0);
    for (int r = 0; r < out.height; ++r) {
        for (int c = 0; c < out.width; ++c) {
            double m = -std::numeric_limits<double>::infinity();
            for (int dr = 0; dr < factor; ++dr)
                for (int dc = 0; dc < factor; ++dc)
                    m = std::max(m, frame.at(r * factor + dr, c * factor + dc));
            out.at(r, c) = m;
        }
    }
    return out;
}

ModelInput assemble_input(std::span<const RadarFrame> frames, Timestamp reference_time) {
    std::array<const RadarFrame*, kLaggedFrames> ordered{};
    for (int i = 0; i < kLaggedFrames; ++i) {
        Timestamp want = reference_time - Timestamp(kLaggedFrames - 1 - i) * kFrameStep;
        for (const auto& f : frames)
            if (f.timestamp == want) ordered[i] = &f;
        if (!ordered[i]) throw DataError("gap in frame sequence: missing " + format_iso8601(want));
    }
    const int h = ordered[0]->height;
    const int w = ordered[0]->width;
    for (const auto* f : ordered)
        if (f->height != h || f->width != w) throw DataError("frames differ in resolution");

    ModelInput in;
    in.reference_time = reference_time;
    in.height = h;
    in.width = w;
    const std::size_t plane = std::size_t(h) * w;
    in.channels.assign(kInputChannels * plane, 0.0);

    for (int i = 0; i < kLaggedFrames; ++i) {
        auto ch = in.channel(i);
        for (std::size_t p = 0; p < plane; ++p) ch[p] = normalize_rain(ordered[i]->rain[p]);
    }
    auto mean_ch = in.channel(7);
    for (std::size_t p = 0; p < plane; ++p) {
        double s = 0.0;
        for (const auto* f : ordered) s += f->rain[p];
        mean_ch[p] = normalize_rain(s / kLaggedFrames);
    }

    auto lat = in.channel(8);
    auto lon = in.channel(9);
    for (int r = 0; r < h; ++r) {
        // pixel centres, row 0 at the northern edge
        double frac_lat = 1.0 - (r + 0.5) / h;
        for (int c = 0; c < w; ++c) {
            double frac_lon = (c + 0.5) / w;
            lat[std::size_t(r) * w + c] = kLatLow + (1.0 - kLatLow) * frac_lat;
            lon[std::size_t(r) * w + c] = kLonLow + (1.0 - kLonLow) * frac_lon;
        }
    }

    CivilTime ct = to_civil(reference_time);
    std::fill(in.channel(10).begin(), in.channel(10).end(), (ct.month - 1) / 11.0);
    std::fill(in.channel(11).begin(), in.channel(11).end(), (ct.day - 1) / 30.0);
    std::fill(in.channel(12).begin(), in.channel(12).end(), ct.hour / 23.0);
    return in;
}

namespace {

struct Flooder {
    const RadarFrame& frame;
    int h, w;
    std::vector<std::uint8_t> fg;
    std::vector<std::int32_t> label;

    bool inside(int r, int c) const { return r >= 0 && r < h && c >= 0 && c < w; }
    std::size_t idx(int r, int c) const { return std::size_t(r) * w + c; }
};

// Disjoint-set over basin labels.
struct UnionFind {
    std::vector<std::int32_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::int32_t find(std::int32_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
};

}  // namespace

SegmentMask watershed_segments(const RadarFrame& frame, const WatershedConfig& config) {
    if (!(config.rain_threshold > 0.0)) throw ConfigError("rain threshold must be > 0");
    Flooder fl{frame, frame.height, frame.width, {}, {}};
    const int h = fl.h, w = fl.w;
    const std::size_t n = std::size_t(h) * w;
    fl.fg.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) fl.fg[i] = frame.rain[i] >= config.rain_threshold;

    // 1. connected components of the foreground; drop the small ones
    std::vector<std::int32_t> comp(n, 0);
    std::vector<std::int64_t> comp_size{0};
    {
        std::vector<std::size_t> stack;
        for (std::size_t s = 0; s < n; ++s) {
            if (!fl.fg[s] || comp[s]) continue;
            auto id = static_cast<std::int32_t>(comp_size.size());
            comp_size.push_back(0);
            comp[s] = id;
            stack.push_back(s);
            while (!stack.empty()) {
                std::size_t p = stack.back();
                stack.pop_back();
                ++comp_size[id];
                int r = int(p / w), c = int(p % w);
                for (int k = 0; k < 8; ++k) {
                    int rr = r + kDr[k], cc = c + kDc[k];
                    if (!fl.inside(rr, cc)) continue;
                    std::size_t q = fl.idx(rr, cc);
                    if (fl.fg[q] && !comp[q]) {
                        comp[q] = id;
                        stack.push_back(q);
                    }
                }
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (fl.fg[i] && comp_size[comp[i]] < config.min_pixels) fl.fg[i] = 0;

    // 2. markers: regional maxima plateaus
    fl.label.assign(n, 0);
    std::vector<std::int32_t> plateau(n, -1);
    std::int32_t next_label = 1;
    std::vector<double> peak{0.0};
    {
        std::vector<std::size_t> members, stack;
        for (std::size_t s = 0; s < n; ++s) {
            if (!fl.fg[s] || plateau[s] >= 0) continue;
            const double v = frame.rain[s];
            members.clear();
            bool is_max = true;
            plateau[s] = 1;
            stack.push_back(s);
            while (!stack.empty()) {
                std::size_t p = stack.back();
                stack.pop_back();
                members.push_back(p);
                int r = int(p / w), c = int(p % w);
                for (int k = 0; k < 8; ++k) {
                    int rr = r + kDr[k], cc = c + kDc[k];
                    if (!fl.inside(rr, cc)) continue;
                    std::size_t q = fl.idx(rr, cc);
                    if (!fl.fg[q]) continue;
                    double u = frame.rain[q];
                    if (u > v) is_max = false;
                    else if (u == v && plateau[q] < 0) {
                        plateau[q] = 1;
                        stack.push_back(q);
                    }
                }
            }
            if (is_max) {
                for (auto p : members) fl.label[p] = next_label;
                peak.push_back(v);
                ++next_label;
            }
        }
    }

    // 3. priority flooding from the markers, highest rain first, FIFO among equals
    struct Item {
        double value;
        std::uint64_t seq;
        std::size_t pixel;
        std::int32_t label;
        bool operator<(const Item& o) const {
            if (value != o.value) return value < o.value;
            return seq > o.seq;
        }
    };
    std::priority_queue<Item> queue;
    std::uint64_t seq = 0;
    auto push_neighbours = [&](std::size_t p, std::int32_t lab) {
        int r = int(p / w), c = int(p % w);
        for (int k = 0; k < 8; ++k) {
            int rr = r + kDr[k], cc = c + kDc[k];
            if (!fl.inside(rr, cc)) continue;
            std::size_t q = fl.idx(rr, cc);
            if (fl.fg[q] && !fl.label[q]) queue.push({frame.rain[q], seq++, q, lab});
        }
    };
    for (std::size_t p = 0; p < n; ++p)
        if (fl.label[p]) push_neighbours(p, fl.label[p]);
    while (!queue.empty()) {
        Item it = queue.top();
        queue.pop();
        if (fl.label[it.pixel]) continue;
        fl.label[it.pixel] = it.label;
        push_neighbours(it.pixel, it.label);
    }

    // 4. merge basins below min_pixels into the neighbour sharing the longest border
    const auto nb = static_cast<std::size_t>(next_label);
    std::vector<std::int64_t> size(nb, 0);
    std::vector<std::map<std::int32_t, std::int64_t>> border(nb);
    for (std::size_t p = 0; p < n; ++p) {
        std::int32_t a = fl.label[p];
        if (!a) continue;
        ++size[a];
        int r = int(p / w), c = int(p % w);
        for (int k = 4; k < 8; ++k) {  // forward half of the neighbourhood, each pair once
            int rr = r + kDr[k], cc = c + kDc[k];
            if (!fl.inside(rr, cc)) continue;
            std::int32_t b = fl.label[fl.idx(rr, cc)];
            if (b && b != a) {
                ++border[a][b];
                ++border[b][a];
            }
        }
    }
    UnionFind uf(nb);
    using Entry = std::pair<std::int64_t, std::int32_t>;  // (size, label) min-heap
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> small;
    for (std::int32_t b = 1; b < next_label; ++b)
        if (size[b] < config.min_pixels) small.push({size[b], b});
    while (!small.empty()) {
        auto [sz, b] = small.top();
        small.pop();
        if (uf.find(b) != b || size[b] != sz || size[b] >= config.min_pixels) continue;
        // pick the neighbour root with the longest shared border; ties go to the higher peak
        std::int32_t best = 0;
        std::int64_t best_len = 0;
        for (auto [nbh, len] : border[b]) {
            std::int32_t root = uf.find(nbh);
            if (root == b) continue;
            if (len > best_len || (len == best_len && best && peak[root] > peak[best])) {
                best = root;
                best_len = len;
            }
        }
        if (!best) continue;  // isolated basin: the whole component is this basin
        // fold b into best
        uf.parent[b] = best;
        size[best] += size[b];
        peak[best] = std::max(peak[best], peak[b]);
        for (auto [nbh, len] : border[b]) {
            std::int32_t root = uf.find(nbh);
            if (root == best) continue;
            border[best][root] += len;
            border[root][best] += len;
        }
        border[b].clear();
        if (size[best] < config.min_pixels) small.push({size[best], best});
    }

    // 5. relabel in raster order of first pixel
    SegmentMask mask;
    mask.frame_time = frame.timestamp;
    mask.height = h;
    mask.width = w;
    mask.labels.assign(n, 0);
    std::vector<std::int32_t> remap(nb, 0);
    std::int32_t count = 0;
    for (std::size_t p = 0; p < n; ++p) {
        if (!fl.label[p]) continue;
        std::int32_t root = uf.find(fl.label[p]);
        if (!remap[root]) {
            remap[root] = ++count;
            SegmentInfo info;
            info.id = count;
            info.bbox = {std::uint32_t(p / w), std::uint32_t(p % w), std::uint32_t(p / w) + 1,
                         std::uint32_t(p % w) + 1};
            mask.segments.push_back(info);
        }
        std::int32_t id = remap[root];
        mask.labels[p] = id;
        auto& s = mask.segments[id - 1];
        auto r = std::uint32_t(p / w), c = std::uint32_t(p % w);
        s.bbox.row0 = std::min(s.bbox.row0, r);
        s.bbox.col0 = std::min(s.bbox.col0, c);
        s.bbox.row1 = std::max(s.bbox.row1, r + 1);
        s.bbox.col1 = std::max(s.bbox.col1, c + 1);
        ++s.pixels;
    }
    return mask;
}

void write_hsr(const std::filesystem::path& path, const RawRadar& raw) {
    if (raw.values.size() != std::size_t(raw.height) * raw.width)
        throw DataError("raw grid size does not match its dimensions");
    io::BinaryWriter out(path);
    out.magic("HSR1");
    out.put<std::uint32_t>(std::uint32_t(raw.height));
    out.put<std::uint32_t>(std::uint32_t(raw.width));
    out.put<std::int64_t>(raw.timestamp);
    out.put_array<std::int16_t>(raw.values);
    out.commit();
}

RawRadar read_hsr(const std::filesystem::path& path) {
    io::BinaryReader in(path);
    in.expect_magic("HSR1");
    RawRadar raw;
    raw.height = int(in.get<std::uint32_t>());
    raw.width = int(in.get<std::uint32_t>());
    raw.timestamp = in.get<std::int64_t>();
    raw.values.resize(std::size_t(raw.height) * raw.width);
    in.get_array<std::int16_t>(raw.values);
    in.expect_end();
    return raw;
}

}  // namespace rainex::preprocess
