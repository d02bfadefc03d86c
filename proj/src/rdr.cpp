#include "rainex/rdr.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "rainex/binary_io.hpp"

namespace rainex::rdr {

const std::vector<std::uint32_t>* PrincipalComponentMap::find(int concept_id) const {
    auto it = per_concept.find(concept_id);
    return it == per_concept.end() ? nullptr : &it->second;
}

std::vector<double> negative_vector(const prober::RowSet& negatives, float threshold) {
    if (negatives.empty()) throw DataError("negative vector needs at least one sample");
    const std::size_t dim = negatives.front().size();
    std::vector<std::uint32_t> counts(dim, 0);
    for (auto row : negatives) {
        if (row.size() != dim) throw ConfigError("negative samples differ in dimension");
        for (std::size_t i = 0; i < dim; ++i) counts[i] += row[i] > threshold;
    }
    std::vector<double> out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = double(counts[i]) / double(negatives.size());
    return out;
}

Selection select_components(const prober::RowSet& positives, const prober::RowSet& negatives,
                            std::size_t d, float threshold) {
    if (positives.empty()) throw DataError("component selection needs positive samples");
    if (d == 0) throw ConfigError("number of components must be >= 1");
    auto neg = negative_vector(negatives, threshold);
    const std::size_t dim = neg.size();

    Selection sel;
    std::vector<std::uint32_t> active(dim, 0);
    for (auto row : positives) {
        if (row.size() != dim) throw ConfigError("positive samples differ in dimension");
        for (std::size_t i = 0; i < dim; ++i) active[i] += row[i] > threshold;
    }
    // mean |s - n| over positives, with s in {0,1}: p(1-n) + (1-p)n
    sel.scores.resize(dim);
    const double np = double(positives.size());
    for (std::size_t i = 0; i < dim; ++i) {
        double on = active[i], off = np - on;
        sel.scores[i] = (on * (1.0 - neg[i]) + off * neg[i]) / np;
    }
    if (d > dim) {
        std::cerr << "warning: requested " << d << " components but dimension is " << dim
                  << "; clamping\n";
        d = dim;
        sel.clamped = true;
    }
    std::vector<std::uint32_t> idx(dim);
    std::iota(idx.begin(), idx.end(), 0u);
    auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (sel.scores[a] != sel.scores[b]) return sel.scores[a] > sel.scores[b];
        return a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + std::ptrdiff_t(d), idx.end(), better);
    sel.ranked.assign(idx.begin(), idx.begin() + std::ptrdiff_t(d));
    return sel;
}

BuildReport build_map(const prober::ConceptLabelSet& labels, const features::FeatureStore& store,
                      const prober::ProberBundle& probers, std::size_t d,
                      const prober::DatasetConfig& dataset, float threshold) {
    BuildReport report;
    report.map.d = std::uint32_t(std::min<std::size_t>(d, store.dim()));
    for (const auto& c : labels.concepts) {
        try {
            auto ds = prober::build_binary_dataset(labels, c.id, store, dataset);
            if (!probers.find(c.id))
                throw MissingArtifact("no prober for trainable concept " + std::to_string(c.id));
            auto sel = select_components(prober::gather_rows(store, ds.train_pos),
                                         prober::gather_rows(store, ds.train_neg), d, threshold);
            auto idx = sel.ranked;
            std::sort(idx.begin(), idx.end());
            report.map.per_concept[c.id] = std::move(idx);
        } catch (const prober::SkipConcept& skip) {
            report.skipped.push_back(skip);
        }
    }
    return report;
}

void write_pc_map(const std::filesystem::path& path, const PrincipalComponentMap& map) {
    io::BinaryWriter out(path);
    out.magic("PCMP");
    out.put<std::uint32_t>(std::uint32_t(map.per_concept.size()));
    out.put<std::uint32_t>(map.d);
    for (const auto& [id, idx] : map.per_concept) {
        if (idx.size() != map.d)
            throw ConfigError("concept " + std::to_string(id) + " has " +
                              std::to_string(idx.size()) + " components, map declares " +
                              std::to_string(map.d));
        out.put<std::uint32_t>(std::uint32_t(id));
        out.put_array<std::uint32_t>(idx);
    }
    out.commit();
}

PrincipalComponentMap read_pc_map(const std::filesystem::path& path) {
    io::BinaryReader in(path);
    in.expect_magic("PCMP");
    auto count = in.get<std::uint32_t>();
    PrincipalComponentMap map;
    map.d = in.get<std::uint32_t>();
    for (std::uint32_t c = 0; c < count; ++c) {
        int id = int(in.get<std::uint32_t>());
        std::vector<std::uint32_t> idx(map.d);
        in.get_array<std::uint32_t>(idx);
        map.per_concept[id] = std::move(idx);
    }
    in.expect_end();
    return map;
}

}  // namespace rainex::rdr
