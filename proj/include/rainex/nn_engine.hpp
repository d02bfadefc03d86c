#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "rainex/features.hpp"
#include "rainex/prober.hpp"
#include "rainex/rdr.hpp"

namespace rainex::nn {

using features::SegmentMeta;

struct Neighbor {
    std::size_t row = 0;
    double distance = 0.0;
    SegmentMeta meta;
    std::vector<prober::ProbeResult> concepts;  // top concepts of the neighbour
};

struct NeighborResult {
    SegmentMeta query_meta;
    std::vector<Neighbor> neighbors;        // non-decreasing distance
    std::vector<int> concepts_used;         // concept ids gating the subspace
    std::vector<prober::ProbeResult> query_concepts;
    std::size_t coordinates_used = 0;
    bool k2_clamped = false;                // asked for more neighbours than rows
    bool filter_exhausted = false;          // temporal filter left nothing
};

struct SearchOptions {
    std::size_t k1 = 3;             // concepts gating the subspace
    std::size_t k2 = 3;             // neighbours returned
    std::size_t top_concepts = 5;   // concept rows attached to each neighbour
    bool annotate = true;
};

/// Flat, exact index over segment features. Stored dimension-major (one contiguous column of
/// N values per coordinate) so that scanning a coordinate subset streams memory.
class SearchIndex {
public:
    SearchIndex() = default;
    static SearchIndex build(const features::FeatureStore& store, rdr::PrincipalComponentMap pc_map,
                             std::shared_ptr<const prober::ProberBundle> probers);
    /// Takes ownership of a dimension-major matrix (dim x N).
    static SearchIndex from_columns(std::uint32_t dim, std::vector<float> columns,
                                    std::vector<SegmentMeta> meta, rdr::PrincipalComponentMap pc_map,
                                    std::shared_ptr<const prober::ProberBundle> probers);

    std::size_t size() const { return meta_.size(); }
    std::uint32_t dim() const { return dim_; }
    std::span<const float> column(std::size_t coord) const {
        return {columns_.data() + coord * meta_.size(), meta_.size()};
    }
    std::vector<float> row(std::size_t i) const;
    const SegmentMeta& meta(std::size_t i) const { return meta_[i]; }
    const std::vector<SegmentMeta>& metas() const { return meta_; }
    const rdr::PrincipalComponentMap& pc_map() const { return pc_map_; }
    const prober::ProberBundle& probers() const;
    bool has_probers() const { return probers_ != nullptr; }
    std::shared_ptr<const prober::ProberBundle> prober_handle() const { return probers_; }
    /// Row of a segment key, or -1.
    std::ptrdiff_t find(const features::SegmentKey& key) const;

    void set_threads(unsigned threads) { threads_ = std::max(1u, threads); }
    unsigned threads() const { return threads_; }

    /// Squared Euclidean distance of every row to the query over `coords` (ascending order).
    std::vector<double> squared_distances(std::span<const float> query,
                                          std::span<const std::uint32_t> coords) const;
    /// Same over every coordinate.
    std::vector<double> squared_distances(std::span<const float> query) const;

private:
    std::uint32_t dim_ = 0;
    std::vector<float> columns_;
    std::vector<SegmentMeta> meta_;
    rdr::PrincipalComponentMap pc_map_;
    std::shared_ptr<const prober::ProberBundle> probers_;
    unsigned threads_ = 1;
};

/// Concept-gated search over the union of the top-k1 concepts' principal components.
NeighborResult search(const SearchIndex& index, std::span<const float> query,
                      const SearchOptions& options = {}, const SegmentMeta& query_meta = {});

/// Same with an explicit PC map in place of the index's own.
NeighborResult search(const SearchIndex& index, const rdr::PrincipalComponentMap& pc_map,
                      std::span<const float> query, const SearchOptions& options = {},
                      const SegmentMeta& query_meta = {});

/// Exact search over all coordinates.
NeighborResult search_full(const SearchIndex& index, std::span<const float> query,
                           const SearchOptions& options = {}, const SegmentMeta& query_meta = {});

/// Linear projection onto the top-d principal axes of the centred index matrix. Axes come from a
/// randomized range finder with power iterations followed by a Rayleigh-Ritz rotation.
class PcaProjection {
public:
    struct Options {
        std::size_t max_fit_rows = 5000;
        int power_iterations = 4;
        std::size_t oversample = 10;
        std::uint64_t seed = 42;
    };

    PcaProjection(const SearchIndex& index, std::size_t d, const Options& options);
    PcaProjection(const SearchIndex& index, std::size_t d) : PcaProjection(index, d, Options{}) {}

    std::size_t components() const { return d_; }
    /// Column j is the j-th axis (dim values), descending explained variance.
    const std::vector<double>& axes() const { return axes_; }
    const std::vector<double>& eigenvalues() const { return eigenvalues_; }
    std::vector<double> project(std::span<const float> x) const;
    NeighborResult search(const SearchIndex& index, std::span<const float> query,
                          const SearchOptions& options = {},
                          const SegmentMeta& query_meta = {}) const;

private:
    std::size_t dim_ = 0, d_ = 0;
    std::vector<double> mean_;
    std::vector<double> axes_;          // dim x d, row-major
    std::vector<double> eigenvalues_;
    std::vector<double> projected_;     // N x d, row-major
};

NeighborResult search_pca(const SearchIndex& index, std::span<const float> query, std::size_t k2,
                          std::size_t d);

/// Drops neighbours closer in time than min_gap (seconds) to the query; order is preserved.
NeighborResult temporal_filter(NeighborResult result, Timestamp query_time, Timestamp min_gap);

/// Concept-gated search followed by the temporal filter. Over-fetches 4*k2 candidates and keeps
/// widening the candidate pool until k2 survivors are found or the index is exhausted.
NeighborResult search_filtered(const SearchIndex& index, std::span<const float> query,
                               Timestamp query_time, Timestamp min_gap,
                               const SearchOptions& options = {},
                               const SegmentMeta& query_meta = {});

inline constexpr double kTimeWeightEpsilon = 1e-8;
/// w(dt) = 1 / (eps + |dt in hours|)^2
double time_weight(Timestamp a, Timestamp b, double epsilon = kTimeWeightEpsilon);

/// Full-space Euclidean distance scaled by the temporal weight.
NeighborResult search_time_weighted(const SearchIndex& index, std::span<const float> query,
                                    Timestamp query_time, const SearchOptions& options = {},
                                    const SegmentMeta& query_meta = {});

// NIDX index files: an embedded feature store plus the file names of the PC map and prober
// bundle, resolved relative to the index file.
struct IndexFile {
    features::FeatureStore store;
    std::string pc_map_file;
    std::string prober_file;
};
void write_index(const std::filesystem::path& path, const features::FeatureStore& store,
                 const std::string& pc_map_file, const std::string& prober_file);
IndexFile read_index_file(const std::filesystem::path& path);
/// Loads the index together with the referenced PC map and prober bundle.
SearchIndex load_index(const std::filesystem::path& path);

}  // namespace rainex::nn
