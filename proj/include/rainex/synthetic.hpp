#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "rainex/preprocess.hpp"
#include "rainex/prober.hpp"

namespace rainex::synth {

/// Storm archetypes; each one doubles as a concept of the synthetic label set.
enum class StormKind : int {
    ConvectiveCell = 0,
    FrontalBand = 1,
    Stratiform = 2,
    Developing = 3,
    Dissipating = 4,
    Stationary = 5,
    Typhoon = 6,  // rare on purpose: too few segments to train a prober
};
inline constexpr int kStormKinds = 7;

std::vector<prober::Concept> storm_concepts();

struct Storm {
    StormKind kind = StormKind::ConvectiveCell;
    double row = 0, col = 0;        // centre at the first frame, pixels
    double drift_row = 0, drift_col = 0;  // pixels per frame
    double sigma_row = 1, sigma_col = 1;
    double peak = 1;                // mm/hr at the first frame
    double growth = 0;              // log-intensity change per frame
};

struct Episode {
    Timestamp start = 0;
    std::vector<Storm> storms;
};

struct SceneConfig {
    int height = 64;
    int width = 64;
    int episodes = 48;
    int frames_per_episode = 19;
    Timestamp first_day = 1'609'459'200;  // 2021-01-01
    std::uint64_t seed = 42;
    double label_share = 0.25;  // minimum share of a segment's rain for a storm to label it
};

/// Episodes spread over one year, each a contiguous run of 10-minute frames.
std::vector<Episode> plan_episodes(const SceneConfig& config);

/// Rain field of one frame; optionally the per-storm contributions.
preprocess::RadarFrame render_frame(const Episode& episode, int frame, const SceneConfig& config,
                                    std::vector<std::vector<double>>* contributions = nullptr);

/// Encodes rain rates as hundredths of dBZ; dry pixels get the no-echo sentinel.
preprocess::RawRadar to_raw(const preprocess::RadarFrame& frame);

/// Concepts of each watershed segment: storms contributing at least `label_share` of its rain.
/// Contributions may be at `factor` times the mask resolution.
std::vector<std::pair<std::int32_t, std::set<int>>> label_segments(
    const preprocess::SegmentMask& mask, const std::vector<std::vector<double>>& contributions,
    const Episode& episode, double label_share, int factor = 1);

}  // namespace rainex::synth
