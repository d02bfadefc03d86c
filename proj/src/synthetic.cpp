#include "rainex/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rainex/error.hpp"

namespace rainex::synth {

std::vector<prober::Concept> storm_concepts() {
    using prober::ConceptSource;
    return {
        {0, "convective cell", ConceptSource::Synth},
        {1, "frontal band", ConceptSource::Synth},
        {2, "stratiform", ConceptSource::Synth},
        {3, "developing", ConceptSource::Synth},
        {4, "dissipating", ConceptSource::Synth},
        {5, "stationary band", ConceptSource::Synth},
        {6, "typhoon", ConceptSource::Synth},
    };
}

namespace {

Storm make_storm(StormKind kind, const SceneConfig& cfg, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double h = cfg.height, w = cfg.width;
    Storm s;
    s.kind = kind;
    s.row = h * (0.2 + 0.6 * u(rng));
    s.col = w * (0.2 + 0.6 * u(rng));
    switch (kind) {
        case StormKind::ConvectiveCell:
            s.sigma_row = s.sigma_col = 2.0 + 1.5 * u(rng);
            s.peak = 25 + 35 * u(rng);
            s.drift_row = -0.3 + 0.6 * u(rng);
            s.drift_col = 0.2 + 0.4 * u(rng);
            break;
        case StormKind::FrontalBand:
            s.sigma_row = 10 + 4 * u(rng);
            s.sigma_col = 2.5 + u(rng);
            s.peak = 6 + 8 * u(rng);
            s.drift_col = 0.5 + 0.3 * u(rng);
            s.col = w * (0.1 + 0.3 * u(rng));
            break;
        case StormKind::Stratiform:
            s.sigma_row = s.sigma_col = 9 + 4 * u(rng);
            s.peak = 1.5 + 3 * u(rng);
            s.drift_col = 0.1 * u(rng);
            break;
        case StormKind::Developing:
            s.sigma_row = s.sigma_col = 3.5 + 1.5 * u(rng);
            s.peak = 2 + 2 * u(rng);
            s.growth = 0.08 + 0.04 * u(rng);
            s.drift_col = 0.2 * u(rng);
            break;
        case StormKind::Dissipating:
            s.sigma_row = s.sigma_col = 4 + 2 * u(rng);
            s.peak = 30 + 20 * u(rng);
            s.growth = -(0.1 + 0.05 * u(rng));
            s.drift_col = 0.2 * u(rng);
            break;
        case StormKind::Stationary:
            s.sigma_row = 2 + u(rng);
            s.sigma_col = 9 + 3 * u(rng);
            s.peak = 10 + 10 * u(rng);
            break;
        case StormKind::Typhoon:
            s.sigma_row = s.sigma_col = 5 + u(rng);
            s.peak = 40 + 20 * u(rng);
            s.drift_row = -0.3;
            break;
    }
    return s;
}

double storm_rain(const Storm& s, int frame, double r, double c) {
    double cr = s.row + s.drift_row * frame, cc = s.col + s.drift_col * frame;
    double dr = (r - cr) / s.sigma_row, dc = (c - cc) / s.sigma_col;
    double amp = s.peak * std::exp(s.growth * frame);
    return amp * std::exp(-0.5 * (dr * dr + dc * dc));
}

}  // namespace

std::vector<Episode> plan_episodes(const SceneConfig& cfg) {
    if (cfg.height <= 0 || cfg.width <= 0 || cfg.episodes <= 0)
        throw ConfigError("scene needs a positive size and episode count");
    if (cfg.frames_per_episode < preprocess::kLaggedFrames)
        throw ConfigError("episodes need at least 7 frames");
    const Timestamp span = Timestamp(cfg.frames_per_episode) * kFrameStep;
    const Timestamp spacing = std::max<Timestamp>(365 * kDay / cfg.episodes / kDay * kDay, kDay);
    if (span > spacing) throw ConfigError("episodes overlap; reduce frames per episode");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<int> hour(0, 23), count(1, 3), kind(0, kStormKinds - 2);
    std::vector<Episode> out;
    for (int e = 0; e < cfg.episodes; ++e) {
        Episode ep;
        ep.start = cfg.first_day + Timestamp(e) * spacing + Timestamp(hour(rng)) * kHour;
        int n = count(rng);
        for (int i = 0; i < n; ++i) {
            auto k = StormKind(kind(rng));
            ep.storms.push_back(make_storm(k, cfg, rng));
        }
        // a single typhoon episode keeps that concept below the training minimum
        if (e == cfg.episodes / 2) ep.storms.push_back(make_storm(StormKind::Typhoon, cfg, rng));
        out.push_back(std::move(ep));
    }
    return out;
}

preprocess::RadarFrame render_frame(const Episode& ep, int frame, const SceneConfig& cfg,
                                    std::vector<std::vector<double>>* contributions) {
    preprocess::RadarFrame f;
    f.timestamp = ep.start + Timestamp(frame) * kFrameStep;
    f.height = cfg.height;
    f.width = cfg.width;
    const std::size_t plane = std::size_t(cfg.height) * cfg.width;
    f.rain.assign(plane, 0.0);
    if (contributions) contributions->assign(ep.storms.size(), std::vector<double>(plane, 0.0));
    for (std::size_t s = 0; s < ep.storms.size(); ++s) {
        for (int r = 0; r < cfg.height; ++r)
            for (int c = 0; c < cfg.width; ++c) {
                double v = storm_rain(ep.storms[s], frame, r + 0.5, c + 0.5);
                f.rain[std::size_t(r) * cfg.width + c] += v;
                if (contributions) (*contributions)[s][std::size_t(r) * cfg.width + c] = v;
            }
    }
    return f;
}

preprocess::RawRadar to_raw(const preprocess::RadarFrame& frame) {
    preprocess::RawRadar raw;
    raw.timestamp = frame.timestamp;
    raw.height = frame.height;
    raw.width = frame.width;
    raw.values.resize(frame.rain.size());
    for (std::size_t i = 0; i < frame.rain.size(); ++i) {
        double r = frame.rain[i];
        if (r < 0.01) {
            raw.values[i] = -30000;
            continue;
        }
        double v = std::round(preprocess::dbz_from_rain_rate(r) * 100.0);
        raw.values[i] = std::int16_t(std::clamp(v, -24999.0, 32767.0));
    }
    return raw;
}

std::vector<std::pair<std::int32_t, std::set<int>>> label_segments(
    const preprocess::SegmentMask& mask, const std::vector<std::vector<double>>& contributions,
    const Episode& episode, double label_share, int factor) {
    if (factor < 1) throw ConfigError("label factor must be >= 1");
    const int fine_w = mask.width * factor;
    for (const auto& c : contributions)
        if (c.size() != mask.labels.size() * std::size_t(factor * factor))
            throw ConfigError("contribution grid does not match the mask");
    std::vector<std::pair<std::int32_t, std::set<int>>> out;
    for (const auto& seg : mask.segments) {
        std::vector<double> share(contributions.size(), 0.0);
        double total = 0.0;
        for (int r = 0; r < mask.height; ++r)
            for (int c = 0; c < mask.width; ++c) {
                if (mask.at(r, c) != seg.id) continue;
                for (int dr = 0; dr < factor; ++dr)
                    for (int dc = 0; dc < factor; ++dc) {
                        std::size_t i = std::size_t(r * factor + dr) * fine_w + c * factor + dc;
                        for (std::size_t s = 0; s < contributions.size(); ++s) {
                            share[s] += contributions[s][i];
                            total += contributions[s][i];
                        }
                    }
            }
        std::set<int> concepts;
        if (total > 0)
            for (std::size_t s = 0; s < share.size(); ++s)
                if (share[s] >= label_share * total) concepts.insert(int(episode.storms[s].kind));
        out.emplace_back(seg.id, std::move(concepts));
    }
    return out;
}

}  // namespace rainex::synth
