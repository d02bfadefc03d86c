#include "rainex/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "rainex/binary_io.hpp"
#include "rainex/error.hpp"

namespace rainex::model {

void ModelSpec::validate() const {
    if (num_classes != int(class_boundaries.size()))
        throw ConfigError("class count must equal class boundary count");
    if (input_channels != preprocess::kInputChannels)
        throw ConfigError("model expects 13 input channels");
    if (bottleneck.channels <= 0 || bottleneck.height <= 0 || bottleneck.width <= 0)
        throw ConfigError("bottleneck shape must be positive");
}

ClassMap argmax_classes(const Logits& logits) {
    ClassMap m{logits.height, logits.width, std::vector<std::uint8_t>(logits.plane(), 0)};
    const std::size_t plane = logits.plane();
    for (std::size_t p = 0; p < plane; ++p) {
        int best = 0;
        double best_v = logits.values[p];
        for (int k = 1; k < logits.classes; ++k) {
            double v = logits.values[std::size_t(k) * plane + p];
            if (v > best_v) {
                best_v = v;
                best = k;
            }
        }
        m.classes[p] = std::uint8_t(best);
    }
    return m;
}

ClassMap classify_rain(std::span<const double> rain, int height, int width,
                       std::span<const double> boundaries) {
    ClassMap m{height, width, std::vector<std::uint8_t>(rain.size(), 0)};
    for (std::size_t p = 0; p < rain.size(); ++p) {
        int k = 0;
        for (std::size_t b = 1; b < boundaries.size(); ++b)
            if (rain[p] >= boundaries[b]) k = int(b);
        m.classes[p] = std::uint8_t(k);
    }
    return m;
}

std::size_t Tensor::expected_size() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

namespace {

Tensor random_tensor(std::vector<std::uint32_t> dims, double stddev, std::mt19937_64& rng) {
    Tensor t{std::move(dims), {}};
    t.values.resize(t.expected_size());
    std::normal_distribution<double> nd(0.0, stddev);
    for (auto& v : t.values) v = float(nd(rng));
    return t;
}

void write_tensor(io::BinaryWriter& out, const Tensor& t) {
    out.put<std::uint32_t>(std::uint32_t(t.dims.size()));
    for (auto d : t.dims) out.put<std::uint32_t>(d);
    out.put_array<float>(t.values);
}

Tensor read_tensor(io::BinaryReader& in) {
    Tensor t;
    auto nd = in.get<std::uint32_t>();
    if (nd == 0 || nd > 8) throw FormatError(in.name() + ": bad tensor rank");
    t.dims.resize(nd);
    for (auto& d : t.dims) d = in.get<std::uint32_t>();
    t.values.resize(t.expected_size());
    in.get_array<float>(t.values);
    return t;
}

void check_dims(const Tensor& t, std::initializer_list<std::uint32_t> want, const char* name) {
    if (t.dims != std::vector<std::uint32_t>(want) || t.values.size() != t.expected_size())
        throw FormatError(std::string("weight tensor '") + name + "' has an unexpected shape");
}

// 3x3, stride 2, edge-replicated padding of 1, then clamp at 0.
std::vector<double> conv_s2(std::span<const double> in, int cin, int h, int w, const Tensor& wt,
                            const Tensor& bias, int cout, int& oh, int& ow) {
    oh = (h + 1) / 2;
    ow = (w + 1) / 2;
    std::vector<double> out(std::size_t(cout) * oh * ow);
    for (int o = 0; o < cout; ++o) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double acc = bias.values[o];
                for (int i = 0; i < cin; ++i) {
                    const double* plane = in.data() + std::size_t(i) * h * w;
                    const float* k = wt.values.data() + (std::size_t(o) * cin + i) * 9;
                    for (int ky = 0; ky < 3; ++ky) {
                        int sy = std::clamp(2 * y - 1 + ky, 0, h - 1);
                        for (int kx = 0; kx < 3; ++kx) {
                            int sx = std::clamp(2 * x - 1 + kx, 0, w - 1);
                            acc += double(k[ky * 3 + kx]) * plane[std::size_t(sy) * w + sx];
                        }
                    }
                }
                out[(std::size_t(o) * oh + y) * ow + x] = std::max(acc, 0.0);
            }
        }
    }
    return out;
}

}  // namespace

ToyWeights generate_toy_weights(const ToyWeightConfig& cfg) {
    if (cfg.hidden_channels <= 0 || cfg.bottleneck_channels <= 0 || cfg.num_classes <= 0)
        throw ConfigError("toy model channel counts must be positive");
    std::mt19937_64 rng(cfg.seed);
    const auto cin = std::uint32_t(preprocess::kInputChannels);
    const auto c1 = std::uint32_t(cfg.hidden_channels);
    const auto c2 = std::uint32_t(cfg.bottleneck_channels);
    const auto k = std::uint32_t(cfg.num_classes);
    ToyWeights w;
    w.conv1_w = random_tensor({c1, cin, 3, 3}, std::sqrt(2.0 / (cin * 9)), rng);
    w.conv1_b = random_tensor({c1}, 0.1, rng);
    w.conv2_w = random_tensor({c2, c1, 3, 3}, std::sqrt(2.0 / (c1 * 9)), rng);
    w.conv2_b = random_tensor({c2}, 0.1, rng);
    // silence a fixed share of bottleneck channels, mimicking a sparsely activated bottleneck
    auto dead = std::size_t(std::lround(cfg.dead_fraction * c2));
    std::vector<std::uint32_t> order(c2);
    for (std::uint32_t i = 0; i < c2; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < dead; ++i) w.conv2_b.values[order[i]] = -1.0e4f;
    w.dec_w = random_tensor({k, c2}, 1.0 / std::sqrt(double(c2)), rng);
    w.dec_b = Tensor{{k}, std::vector<float>(k)};
    for (std::uint32_t i = 0; i < k; ++i) w.dec_b.values[i] = float(0.5 - 0.25 * i);

    if (cfg.intensity_path) {
        if (k != std::uint32_t(kNumClasses)) throw ConfigError("intensity path needs the 8 rain classes");
        if (dead >= c2) throw ConfigError("intensity path needs a live bottleneck channel");
        const std::uint32_t h0 = 0, b0 = order[dead];
        const std::uint32_t t0 = 6;  // RainT0 input channel
        const double shift = -preprocess::kRainLow;  // keeps the path above the clamp at 0
        std::fill_n(w.conv1_w.values.begin() + std::ptrdiff_t(h0) * cin * 9, cin * 9, 0.0f);
        w.conv1_w.values[(std::size_t(h0) * cin + t0) * 9 + 4] = 1.0f;
        w.conv1_b.values[h0] = float(shift);
        std::fill_n(w.conv2_w.values.begin() + std::ptrdiff_t(b0) * c1 * 9, c1 * 9, 0.0f);
        w.conv2_w.values[(std::size_t(b0) * c1 + h0) * 9 + 4] = 1.0f;
        w.conv2_b.values[b0] = 0.0f;
        // logit_k - logit_{k-1} = gain * (x - tau_k), tau_k = path value at boundary k
        double bias = 0.0;
        for (std::uint32_t i = 0; i < k; ++i) {
            if (i > 0) bias -= cfg.intensity_gain * (shift + preprocess::normalize_rain(kClassBoundaries[i]));
            w.dec_w.values[std::size_t(i) * c2 + b0] = float(cfg.intensity_gain * i);
            w.dec_b.values[i] = float(bias);
        }
    }
    return w;
}

void write_weights(const std::filesystem::path& path, const ToyWeights& w) {
    io::BinaryWriter out(path);
    out.magic("TOYW");
    out.put<std::uint32_t>(6);
    for (const Tensor* t : {&w.conv1_w, &w.conv1_b, &w.conv2_w, &w.conv2_b, &w.dec_w, &w.dec_b})
        write_tensor(out, *t);
    out.commit();
}

ToyWeights read_weights(const std::filesystem::path& path) {
    io::BinaryReader in(path);
    in.expect_magic("TOYW");
    if (in.get<std::uint32_t>() != 6) throw FormatError(path.string() + ": expected 6 layers");
    ToyWeights w;
    for (Tensor* t : {&w.conv1_w, &w.conv1_b, &w.conv2_w, &w.conv2_b, &w.dec_w, &w.dec_b})
        *t = read_tensor(in);
    in.expect_end();
    return w;
}

ToyModel::ToyModel(ToyWeights weights, int input_height, int input_width)
    : weights_(std::move(weights)) {
    if (weights_.conv1_w.dims.size() != 4 || weights_.conv2_w.dims.size() != 4 ||
        weights_.dec_w.dims.size() != 2)
        throw FormatError("toy weights have unexpected ranks");
    hidden_ = int(weights_.conv1_w.dims[0]);
    const auto c1 = weights_.conv1_w.dims[0];
    const auto c2 = weights_.conv2_w.dims[0];
    const auto k = weights_.dec_w.dims[0];
    check_dims(weights_.conv1_w, {c1, std::uint32_t(preprocess::kInputChannels), 3, 3}, "conv1_w");
    check_dims(weights_.conv1_b, {c1}, "conv1_b");
    check_dims(weights_.conv2_w, {c2, c1, 3, 3}, "conv2_w");
    check_dims(weights_.conv2_b, {c2}, "conv2_b");
    check_dims(weights_.dec_w, {k, c2}, "dec_w");
    check_dims(weights_.dec_b, {k}, "dec_b");
    if (input_height <= 0 || input_width <= 0 || input_height % 4 || input_width % 4)
        throw ConfigError("toy model input size must be a positive multiple of 4");
    spec_.input_height = input_height;
    spec_.input_width = input_width;
    spec_.num_classes = int(k);
    spec_.bottleneck = {int(c2), input_height / 4, input_width / 4};
    if (int(k) != kNumClasses) {
        spec_.class_boundaries.resize(k);
    }
    spec_.validate();
}

FeatureMap ToyModel::encode(const preprocess::ModelInput& input) const {
    if (input.height != spec_.input_height || input.width != spec_.input_width ||
        input.channels.size() != std::size_t(spec_.input_channels) * input.height * input.width)
        throw ConfigError("model input shape " + std::to_string(input.height) + "x" +
                          std::to_string(input.width) + " does not match the model spec");
    int h1, w1, h2, w2;
    auto a1 = conv_s2(input.channels, spec_.input_channels, input.height, input.width,
                      weights_.conv1_w, weights_.conv1_b, hidden_, h1, w1);
    auto a2 = conv_s2(a1, hidden_, h1, w1, weights_.conv2_w, weights_.conv2_b,
                      spec_.bottleneck.channels, h2, w2);
    return FeatureMap{spec_.bottleneck, std::move(a2), input.reference_time};
}

Logits ToyModel::head(const FeatureMap& z, bool with_bias) const {
    if (z.shape != spec_.bottleneck || z.values.size() != z.shape.size())
        throw ConfigError("feature map shape does not match the model bottleneck");
    const int k_count = spec_.num_classes;
    const int c_count = z.shape.channels;
    const std::size_t low_plane = std::size_t(z.shape.height) * z.shape.width;
    std::vector<double> low(std::size_t(k_count) * low_plane);
    for (int k = 0; k < k_count; ++k) {
        double* dst = low.data() + std::size_t(k) * low_plane;
        double b = with_bias ? double(weights_.dec_b.values[k]) : 0.0;
        std::fill(dst, dst + low_plane, b);
        for (int c = 0; c < c_count; ++c) {
            double wkc = weights_.dec_w.values[std::size_t(k) * c_count + c];
            const double* src = z.values.data() + std::size_t(c) * low_plane;
            for (std::size_t p = 0; p < low_plane; ++p) dst[p] += wkc * src[p];
        }
    }
    Logits out{k_count, spec_.input_height, spec_.input_width, {}};
    out.values.resize(std::size_t(k_count) * out.plane());
    auto taps = bilinear_taps(z.shape.height, z.shape.width, out.height, out.width);
    for (int k = 0; k < k_count; ++k)
        resample(taps, {low.data() + std::size_t(k) * low_plane, low_plane},
                 {out.values.data() + std::size_t(k) * out.plane(), out.plane()});
    return out;
}

Logits ToyModel::decode(const FeatureMap& feature) const { return head(feature, true); }

std::optional<Logits> ToyModel::decode_linear(const FeatureMap& direction) const {
    return head(direction, false);
}

ResampleTaps bilinear_taps(int in_h, int in_w, int out_h, int out_w) {
    if (in_h <= 0 || in_w <= 0 || out_h <= 0 || out_w <= 0)
        throw ConfigError("resample sizes must be positive");
    ResampleTaps t{in_h, in_w, out_h, out_w, {}};
    t.taps.resize(std::size_t(out_h) * out_w);
    auto axis = [](int out_i, int in_n, int out_n, int& i0, int& i1, double& frac) {
        double src = (out_i + 0.5) * double(in_n) / out_n - 0.5;
        src = std::clamp(src, 0.0, double(in_n - 1));
        i0 = int(std::floor(src));
        i1 = std::min(i0 + 1, in_n - 1);
        frac = src - i0;
    };
    for (int y = 0; y < out_h; ++y) {
        int y0, y1;
        double fy;
        axis(y, in_h, out_h, y0, y1, fy);
        for (int x = 0; x < out_w; ++x) {
            int x0, x1;
            double fx;
            axis(x, in_w, out_w, x0, x1, fx);
            auto& tp = t.taps[std::size_t(y) * out_w + x];
            tp[0] = {std::uint32_t(y0 * in_w + x0), (1 - fy) * (1 - fx)};
            tp[1] = {std::uint32_t(y0 * in_w + x1), (1 - fy) * fx};
            tp[2] = {std::uint32_t(y1 * in_w + x0), fy * (1 - fx)};
            tp[3] = {std::uint32_t(y1 * in_w + x1), fy * fx};
        }
    }
    return t;
}

void resample(const ResampleTaps& taps, std::span<const double> in, std::span<double> out) {
    for (std::size_t p = 0; p < taps.taps.size(); ++p) {
        double acc = 0.0;
        for (const auto& [src, wgt] : taps.taps[p]) acc += wgt * in[src];
        out[p] = acc;
    }
}

}  // namespace rainex::model
