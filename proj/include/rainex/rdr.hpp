#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "rainex/features.hpp"
#include "rainex/prober.hpp"

namespace rainex::rdr {

inline constexpr std::size_t kDefaultComponents = 300;

/// Concept id -> sorted principal neuron (coordinate) indices.
struct PrincipalComponentMap {
    std::uint32_t d = kDefaultComponents;
    std::map<int, std::vector<std::uint32_t>> per_concept;

    const std::vector<std::uint32_t>* find(int concept_id) const;
    bool operator==(const PrincipalComponentMap&) const = default;
};

/// Fraction of negatives with each coordinate active (> threshold).
std::vector<double> negative_vector(const prober::RowSet& negatives, float threshold = 0.0f);

struct Selection {
    std::vector<std::uint32_t> ranked;  // best first; ties by ascending index
    std::vector<double> scores;         // one per coordinate
    bool clamped = false;               // d exceeded the dimension
};

/// Scores each coordinate by mean_{positives} |1[x_i > threshold] - negvec_i| and keeps the top d.
Selection select_components(const prober::RowSet& positives, const prober::RowSet& negatives,
                            std::size_t d, float threshold = 0.0f);

struct BuildReport {
    PrincipalComponentMap map;
    std::vector<prober::SkipConcept> skipped;
};

/// Runs select_components for every concept that has a prober, on that concept's training split.
BuildReport build_map(const prober::ConceptLabelSet& labels, const features::FeatureStore& store,
                      const prober::ProberBundle& probers, std::size_t d,
                      const prober::DatasetConfig& dataset = {}, float threshold = 0.0f);

// PCMP files.
void write_pc_map(const std::filesystem::path& path, const PrincipalComponentMap& map);
PrincipalComponentMap read_pc_map(const std::filesystem::path& path);

}  // namespace rainex::rdr
