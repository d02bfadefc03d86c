#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rainex/time.hpp"

namespace rainex::preprocess {

// Z-R relationship R = (Z/a)^(1/b) and the rain-rate squashing constants.
inline constexpr double kZrA = 148.0;
inline constexpr double kZrB = 1.59;
inline constexpr double kRainMu = -0.01;
inline constexpr double kRainSigma = 4.0;
inline constexpr double kRainLow = -0.8182;
inline constexpr double kRainHigh = 1.0;
inline constexpr double kLatLow = 0.6911;
inline constexpr double kLonLow = 0.8899;

inline constexpr int kLaggedFrames = 7;
inline constexpr int kInputChannels = 13;

/// Geographic bounding box in degrees. Row 0 of a grid is the northern edge.
struct GeoExtent {
    double lat_min = 30.0;
    double lat_max = 43.4;
    double lon_min = 124.0;
    double lon_max = 139.3;
};

/// One timestamped rain-rate grid (mm/hr), row-major.
struct RadarFrame {
    Timestamp timestamp = 0;
    int height = 0;
    int width = 0;
    std::vector<double> rain;
    GeoExtent extent;

    double at(int r, int c) const { return rain[std::size_t(r) * width + c]; }
    double& at(int r, int c) { return rain[std::size_t(r) * width + c]; }
};

/// Raw scaled-dBZ grid as stored in HSR1 files (hundredths of dBZ).
struct RawRadar {
    Timestamp timestamp = 0;
    int height = 0;
    int width = 0;
    std::vector<std::int16_t> values;
};

struct ConversionConfig {
    std::vector<std::int16_t> sentinels{-32768, -30000, -25000};
};

enum class ChannelRole : std::uint8_t {
    RainTm60, RainTm50, RainTm40, RainTm30, RainTm20, RainTm10, RainT0,
    HourlyMean, Latitude, Longitude, Month, Day, Hour
};

/// 13 normalized channels of H x W, channel-major.
struct ModelInput {
    Timestamp reference_time = 0;
    int height = 0;
    int width = 0;
    std::vector<double> channels;

    static constexpr std::array<ChannelRole, kInputChannels> roles() {
        return {ChannelRole::RainTm60, ChannelRole::RainTm50, ChannelRole::RainTm40,
                ChannelRole::RainTm30, ChannelRole::RainTm20, ChannelRole::RainTm10,
                ChannelRole::RainT0,   ChannelRole::HourlyMean, ChannelRole::Latitude,
                ChannelRole::Longitude, ChannelRole::Month,   ChannelRole::Day,
                ChannelRole::Hour};
    }
    std::span<const double> channel(int c) const {
        return {channels.data() + std::size_t(c) * height * width, std::size_t(height) * width};
    }
    std::span<double> channel(int c) {
        return {channels.data() + std::size_t(c) * height * width, std::size_t(height) * width};
    }
};

/// Half-open pixel box [row0,row1) x [col0,col1).
struct BBox {
    std::uint32_t row0 = 0, col0 = 0, row1 = 0, col1 = 0;
    std::uint32_t rows() const { return row1 - row0; }
    std::uint32_t cols() const { return col1 - col0; }
    bool operator==(const BBox&) const = default;
};

struct SegmentInfo {
    std::int32_t id = 0;
    BBox bbox;
    std::int64_t pixels = 0;
};

/// Label image of independent precipitation segments; 0 is background.
struct SegmentMask {
    Timestamp frame_time = 0;
    int height = 0;
    int width = 0;
    std::vector<std::int32_t> labels;
    std::vector<SegmentInfo> segments;

    std::int32_t at(int r, int c) const { return labels[std::size_t(r) * width + c]; }
    const SegmentInfo* find(std::int32_t id) const;
};

struct WatershedConfig {
    double rain_threshold = 0.1;  // mm/hr, lowest class boundary
    std::int64_t min_pixels = 16;
};

// Scalar conversions; exposed for property tests.
double rain_rate_from_dbz(double dbz);
double dbz_from_rain_rate(double rain);

/// Converts hundredths-of-dBZ to rain rate. Sentinel pixels map to 0 mm/hr.
RadarFrame dbz_to_rainrate(const RawRadar& raw, const GeoExtent& extent = {},
                           const ConversionConfig& config = {});
/// Same as above for already-decoded raw values; non-finite entries raise DataError naming the pixel.
RadarFrame dbz_to_rainrate(std::span<const double> raw, int height, int width, Timestamp t,
                           const GeoExtent& extent = {}, const ConversionConfig& config = {});

/// Squashes rain rate into (-0.8182, 1] with a scaled tanh. Monotone non-decreasing.
double normalize_rain(double value);

/// Max pooling by an integer factor.
RadarFrame downsample(const RadarFrame& frame, int factor = 2);

/// Builds the 13-channel input from the seven frames T-60..T.
ModelInput assemble_input(std::span<const RadarFrame> frames, Timestamp reference_time);

/// Marker-based watershed on the negated rain field with 8-connectivity.
SegmentMask watershed_segments(const RadarFrame& frame, const WatershedConfig& config = {});

// HSR1 radar files.
void write_hsr(const std::filesystem::path& path, const RawRadar& raw);
RawRadar read_hsr(const std::filesystem::path& path);

}  // namespace rainex::preprocess
