#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "rainex/preprocess.hpp"

namespace rainex::model {

inline constexpr int kNumClasses = 8;
/// Lower rain-rate boundary (mm/hr) of each output class.
inline constexpr std::array<double, kNumClasses> kClassBoundaries{0.0, 0.1, 1.0, 5.0,
                                                                  10.0, 20.0, 25.0, 30.0};

struct Shape3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::size_t size() const { return std::size_t(channels) * height * width; }
    bool operator==(const Shape3&) const = default;
};

struct ModelSpec {
    int input_channels = preprocess::kInputChannels;
    int input_height = 32;
    int input_width = 32;
    int num_classes = kNumClasses;
    std::vector<double> class_boundaries{kClassBoundaries.begin(), kClassBoundaries.end()};
    Shape3 bottleneck{64, 8, 8};

    /// Bottleneck of the full-size forecast model (DownSample output).
    static constexpr Shape3 reference_bottleneck() { return {1024, 32, 36}; }
    void validate() const;
};

/// Bottleneck activations, channel-major.
struct FeatureMap {
    Shape3 shape;
    std::vector<double> values;
    Timestamp source_time = 0;

    static FeatureMap zeros(Shape3 s) { return {s, std::vector<double>(s.size(), 0.0), 0}; }
    double at(int c, int r, int col) const {
        return values[(std::size_t(c) * shape.height + r) * shape.width + col];
    }
    double& at(int c, int r, int col) {
        return values[(std::size_t(c) * shape.height + r) * shape.width + col];
    }
};

/// Per-pixel class logits, class-major (K x H x W).
struct Logits {
    int classes = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    double at(int k, int r, int c) const {
        return values[(std::size_t(k) * height + r) * width + c];
    }
    std::size_t plane() const { return std::size_t(height) * width; }
};

/// Class-index image (argmax over logits).
struct ClassMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> classes;

    bool operator==(const ClassMap&) const = default;
};

ClassMap argmax_classes(const Logits& logits);
/// Maps rain rates to class indices using the lower class boundaries.
ClassMap classify_rain(std::span<const double> rain, int height, int width,
                       std::span<const double> boundaries = kClassBoundaries);

/// Encoder phi (input -> bottleneck) and decoder h (bottleneck -> logits).
class SegmentationModel {
public:
    virtual ~SegmentationModel() = default;
    virtual const ModelSpec& spec() const = 0;
    virtual FeatureMap encode(const preprocess::ModelInput& input) const = 0;
    virtual Logits decode(const FeatureMap& feature) const = 0;
    /// Linear part of an affine decoder, if the decoder is affine.
    virtual std::optional<Logits> decode_linear(const FeatureMap&) const { return std::nullopt; }
};

struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
    std::size_t expected_size() const;
};

/// conv1 (w,b), conv2 (w,b), decoder (w,b).
struct ToyWeights {
    Tensor conv1_w, conv1_b, conv2_w, conv2_b, dec_w, dec_b;
};

struct ToyWeightConfig {
    int hidden_channels = 32;
    int bottleneck_channels = 64;
    int num_classes = kNumClasses;
    double dead_fraction = 0.25;  // bottleneck channels with a bias that keeps them at zero
    /// Routes the T0 rain channel through one hidden and one bottleneck channel and thresholds
    /// it at the class boundaries, so the toy predicts persistence. Needs the 8 rain classes.
    bool intensity_path = true;
    double intensity_gain = 1.0e6;
    std::uint64_t seed = 42;
};

ToyWeights generate_toy_weights(const ToyWeightConfig& config);
void write_weights(const std::filesystem::path& path, const ToyWeights& w);
ToyWeights read_weights(const std::filesystem::path& path);

/// Two stride-2 3x3 convolutions (edge-replicated padding) with clamping to >= 0, then a
/// per-class affine 1x1 head and bilinear x4 upsampling.
class ToyModel final : public SegmentationModel {
public:
    ToyModel(ToyWeights weights, int input_height, int input_width);

    const ModelSpec& spec() const override { return spec_; }
    FeatureMap encode(const preprocess::ModelInput& input) const override;
    Logits decode(const FeatureMap& feature) const override;
    std::optional<Logits> decode_linear(const FeatureMap& direction) const override;
    const ToyWeights& weights() const { return weights_; }

private:
    Logits head(const FeatureMap& feature, bool with_bias) const;

    ToyWeights weights_;
    ModelSpec spec_;
    int hidden_ = 0;
};

/// Bilinear resampling with half-pixel centres and edge clamping.
/// For each output pixel, lists up to 4 (source index, weight) taps.
struct ResampleTaps {
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    std::vector<std::array<std::pair<std::uint32_t, double>, 4>> taps;
};
ResampleTaps bilinear_taps(int in_h, int in_w, int out_h, int out_w);
void resample(const ResampleTaps& taps, std::span<const double> in, std::span<double> out);

}  // namespace rainex::model
