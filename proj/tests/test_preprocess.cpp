#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "rainex/error.hpp"
#include "rainex/preprocess.hpp"
#include "test_support.hpp"

using namespace rainex;
using namespace rainex::preprocess;

TEST(Preprocess, ZrConstants) {
    EXPECT_EQ(kZrA, 148.0);
    EXPECT_EQ(kZrB, 1.59);
    EXPECT_EQ(kRainMu, -0.01);
    EXPECT_EQ(kRainSigma, 4.0);
    EXPECT_EQ(kRainLow, -0.8182);
    EXPECT_EQ(kLatLow, 0.6911);
    EXPECT_EQ(kLonLow, 0.8899);
}

TEST(Preprocess, ZrRoundTrip) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> dbz(-20.0, 70.0);
    for (int i = 0; i < 100000; ++i) {
        double d = dbz(rng);
        double r = rain_rate_from_dbz(d);
        // closed form R = (10^(dBZ/10) / a)^(1/b)
        double oracle = std::pow(std::pow(10.0, d / 10.0) / 148.0, 1.0 / 1.59);
        ASSERT_NEAR(r, oracle, 1e-12 * oracle);
        ASSERT_NEAR(dbz_from_rain_rate(r), d, 1e-9 * std::abs(d) + 1e-12);
    }
}

TEST(Preprocess, RawConversionHandlesSentinels) {
    RawRadar raw{1000, 1, 4, {-32768, -30000, -25000, 3000}};
    auto f = dbz_to_rainrate(raw);
    EXPECT_EQ(f.rain[0], 0.0);
    EXPECT_EQ(f.rain[1], 0.0);
    EXPECT_EQ(f.rain[2], 0.0);
    EXPECT_NEAR(f.rain[3], rain_rate_from_dbz(30.0), 1e-12);
    EXPECT_EQ(f.timestamp, 1000);

    std::vector<double> vals{100.0, std::numeric_limits<double>::quiet_NaN()};
    try {
        dbz_to_rainrate(vals, 1, 2, 0);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("pixel 1"), std::string::npos);
    }
    RawRadar wrong{0, 2, 2, {0, 0, 0}};
    EXPECT_THROW(dbz_to_rainrate(wrong), DataError);
}

TEST(Preprocess, NormalizeRangeAndMonotone) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> logr(-6.0, 6.0);
    std::vector<double> xs(1'000'000);
    for (auto& x : xs) x = std::pow(10.0, logr(rng)) * (rng() % 10 == 0 ? -1.0 : 1.0);
    xs.push_back(0.0);
    xs.push_back(1e300);
    xs.push_back(-1e300);
    std::sort(xs.begin(), xs.end());
    double prev = -std::numeric_limits<double>::infinity();
    for (double x : xs) {
        double y = normalize_rain(x);
        ASSERT_GT(y, kRainLow);
        ASSERT_LE(y, kRainHigh);
        ASSERT_GE(y, prev) << "at " << x;
        prev = y;
    }
    EXPECT_EQ(normalize_rain(1e300), kRainHigh);
    // the affine rescale sends the tanh midpoint (x = mu) to the centre of the range
    EXPECT_NEAR(normalize_rain(kRainMu), 0.5 * (kRainLow + kRainHigh), 1e-15);
    EXPECT_NEAR(normalize_rain(-0.01), 0.0909, 1e-12);
}

TEST(Preprocess, DownsampleIsBlockMax) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.0, 50.0);
    RadarFrame f;
    f.height = 6;
    f.width = 4;
    f.timestamp = 77;
    f.rain.resize(24);
    for (auto& v : f.rain) v = u(rng);
    auto d = downsample(f, 2);
    ASSERT_EQ(d.height, 3);
    ASSERT_EQ(d.width, 2);
    EXPECT_EQ(d.timestamp, 77);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 2; ++c) {
            double m = std::max({f.at(2 * r, 2 * c), f.at(2 * r + 1, 2 * c), f.at(2 * r, 2 * c + 1),
                                 f.at(2 * r + 1, 2 * c + 1)});
            EXPECT_EQ(d.at(r, c), m);
        }
    EXPECT_THROW(downsample(f, 4), ConfigError);
    EXPECT_THROW(downsample(f, 0), ConfigError);
}

namespace {

RadarFrame constant_frame(Timestamp t, double v, int h = 4, int w = 4) {
    RadarFrame f;
    f.timestamp = t;
    f.height = h;
    f.width = w;
    f.rain.assign(std::size_t(h) * w, v);
    return f;
}

}  // namespace

TEST(Preprocess, AssembleInputChannels) {
    const Timestamp t0 = 1'625'140'800;  // 2021-07-01T12:00Z
    std::vector<RadarFrame> frames;
    for (int i = 6; i >= 0; --i) frames.push_back(constant_frame(t0 - i * kFrameStep, double(6 - i)));
    std::reverse(frames.begin(), frames.end());  // order on input does not matter
    auto in = assemble_input(frames, t0);
    ASSERT_EQ(in.channels.size(), std::size_t(13 * 16));
    for (int c = 0; c < 7; ++c) EXPECT_DOUBLE_EQ(in.channel(c)[5], normalize_rain(double(c)));
    EXPECT_DOUBLE_EQ(in.channel(7)[0], normalize_rain(3.0));
    // latitude falls from north to south, longitude rises west to east, both inside their ranges
    EXPECT_GT(in.channel(8)[0], in.channel(8)[12]);
    EXPECT_LT(in.channel(9)[0], in.channel(9)[3]);
    for (double v : in.channel(8)) EXPECT_TRUE(v > kLatLow && v <= 1.0);
    for (double v : in.channel(9)) EXPECT_TRUE(v > kLonLow && v <= 1.0);
    EXPECT_DOUBLE_EQ(in.channel(10)[0], 6.0 / 11.0);
    EXPECT_DOUBLE_EQ(in.channel(11)[0], 0.0);
    EXPECT_DOUBLE_EQ(in.channel(12)[0], 12.0 / 23.0);

    frames.erase(frames.begin() + 3);
    EXPECT_THROW(assemble_input(frames, t0), DataError);
}

namespace {

/// 8-connected components of pixels above the threshold; components below min_pixels dropped.
std::vector<int> component_oracle(const RadarFrame& f, double threshold, std::int64_t min_pixels) {
    const int h = f.height, w = f.width;
    std::vector<int> comp(std::size_t(h) * w, 0);
    int next = 0;
    for (int r0 = 0; r0 < h; ++r0)
        for (int c0 = 0; c0 < w; ++c0) {
            if (f.at(r0, c0) < threshold || comp[r0 * w + c0]) continue;
            ++next;
            std::vector<std::pair<int, int>> todo{{r0, c0}}, members;
            comp[r0 * w + c0] = next;
            while (!todo.empty()) {
                auto [r, c] = todo.back();
                todo.pop_back();
                members.push_back({r, c});
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                        if (f.at(rr, cc) >= threshold && !comp[rr * w + cc]) {
                            comp[rr * w + cc] = next;
                            todo.push_back({rr, cc});
                        }
                    }
            }
            if (std::int64_t(members.size()) < min_pixels)
                for (auto [r, c] : members) comp[r * w + c] = -1;
        }
    for (auto& v : comp)
        if (v < 0) v = 0;
    return comp;
}

bool eight_connected(const SegmentMask& m, std::int32_t id) {
    std::vector<char> seen(m.labels.size(), 0);
    std::size_t start = m.labels.size(), total = 0;
    for (std::size_t p = 0; p < m.labels.size(); ++p)
        if (m.labels[p] == id) {
            ++total;
            if (start == m.labels.size()) start = p;
        }
    if (!total) return false;
    std::vector<std::size_t> todo{start};
    seen[start] = 1;
    std::size_t reached = 0;
    while (!todo.empty()) {
        auto p = todo.back();
        todo.pop_back();
        ++reached;
        int r = int(p / m.width), c = int(p % m.width);
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= m.height || cc < 0 || cc >= m.width) continue;
                std::size_t q = std::size_t(rr) * m.width + cc;
                if (!seen[q] && m.labels[q] == id) {
                    seen[q] = 1;
                    todo.push_back(q);
                }
            }
    }
    return reached == total;
}

RadarFrame two_blob_field(std::mt19937_64& rng, int h, int w) {
    std::uniform_real_distribution<double> pos(0.0, 1.0), sig(1.5, 6.0), peak(1.0, 40.0);
    RadarFrame f = constant_frame(0, 0.0, h, w);
    for (int b = 0; b < 2; ++b) {
        double cr = pos(rng) * h, cc = pos(rng) * w, sr = sig(rng), sc = sig(rng), p = peak(rng);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                double z = (r - cr) * (r - cr) / (2 * sr * sr) + (c - cc) * (c - cc) / (2 * sc * sc);
                f.at(r, c) += p * std::exp(-z);
            }
    }
    // light noise breaks plateaus without moving the blobs
    std::uniform_real_distribution<double> noise(0.0, 0.05);
    for (auto& v : f.rain) v += noise(rng);
    return f;
}

}  // namespace

TEST(Watershed, DisjointCoverageAgainstComponentOracle) {
    std::mt19937_64 rng(42);
    WatershedConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        auto f = two_blob_field(rng, 48, 40);
        auto mask = watershed_segments(f, cfg);
        auto comp = component_oracle(f, cfg.rain_threshold, cfg.min_pixels);
        ASSERT_EQ(mask.labels.size(), comp.size());

        std::map<std::int32_t, std::set<int>> comps_of_segment;
        std::map<std::int32_t, std::int64_t> count;
        for (std::size_t p = 0; p < comp.size(); ++p) {
            // coverage: labelled exactly where the oracle keeps a component
            ASSERT_EQ(mask.labels[p] != 0, comp[p] != 0) << "trial " << trial << " pixel " << p;
            if (mask.labels[p]) {
                comps_of_segment[mask.labels[p]].insert(comp[p]);
                ++count[mask.labels[p]];
            }
        }
        ASSERT_EQ(mask.segments.size(), comps_of_segment.size());
        for (const auto& s : mask.segments) {
            // a segment never spans two components and is itself connected
            EXPECT_EQ(comps_of_segment[s.id].size(), 1u);
            EXPECT_EQ(s.pixels, count[s.id]);
            EXPECT_TRUE(eight_connected(mask, s.id));
            for (int r = 0; r < mask.height; ++r)
                for (int c = 0; c < mask.width; ++c)
                    if (mask.at(r, c) == s.id) {
                        EXPECT_GE(std::uint32_t(r), s.bbox.row0);
                        EXPECT_LT(std::uint32_t(r), s.bbox.row1);
                        EXPECT_GE(std::uint32_t(c), s.bbox.col0);
                        EXPECT_LT(std::uint32_t(c), s.bbox.col1);
                    }
        }
        // basins are merged until each reaches the minimum size, or fills its component
        std::map<int, std::int64_t> comp_size;
        for (int v : comp)
            if (v) ++comp_size[v];
        for (const auto& s : mask.segments) {
            int c = *comps_of_segment[s.id].begin();
            EXPECT_TRUE(s.pixels >= cfg.min_pixels || s.pixels == comp_size[c]);
        }
    }
}

TEST(Watershed, SplitsTwoTouchingPeaks) {
    RadarFrame f = constant_frame(0, 0.0, 20, 40);
    for (int r = 0; r < 20; ++r)
        for (int c = 0; c < 40; ++c) {
            double a = 30.0 * std::exp(-((r - 10.0) * (r - 10.0) + (c - 10.0) * (c - 10.0)) / 40.0);
            double b = 20.0 * std::exp(-((r - 10.0) * (r - 10.0) + (c - 29.0) * (c - 29.0)) / 40.0);
            f.at(r, c) = a + b;
        }
    auto m = watershed_segments(f);
    ASSERT_EQ(m.segments.size(), 2u);
    EXPECT_NE(m.at(10, 10), m.at(10, 29));
    EXPECT_EQ(m.segments[0].id, 1);
    EXPECT_THROW(watershed_segments(f, {0.0, 16}), ConfigError);
}

TEST(Watershed, DropsSmallIsolatedSpecks) {
    RadarFrame f = constant_frame(0, 0.0, 10, 10);
    f.at(2, 2) = 5.0;  // one pixel, below min_pixels
    auto m = watershed_segments(f);
    EXPECT_TRUE(m.segments.empty());
    for (auto v : m.labels) EXPECT_EQ(v, 0);
}

TEST(Hsr, RoundTripAndTruncation) {
    testkit::TempDir dir;
    RawRadar raw{1'609'459'200, 3, 5, {}};
    std::mt19937 rng(42);
    for (int i = 0; i < 15; ++i) raw.values.push_back(std::int16_t(int(rng() % 60000) - 30000));
    write_hsr(dir / "a.hsr", raw);
    auto back = read_hsr(dir / "a.hsr");
    EXPECT_EQ(back.timestamp, raw.timestamp);
    EXPECT_EQ(back.height, 3);
    EXPECT_EQ(back.width, 5);
    EXPECT_EQ(back.values, raw.values);

    auto bytes = testkit::slurp(dir / "a.hsr");
    EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 8 + 2 * 15);
    testkit::spit(dir / "b.hsr", bytes.substr(0, bytes.size() - 1));
    EXPECT_THROW(read_hsr(dir / "b.hsr"), FormatError);
    testkit::spit(dir / "c.hsr", bytes + "x");
    EXPECT_THROW(read_hsr(dir / "c.hsr"), FormatError);
}
