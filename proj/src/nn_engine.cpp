#include "rainex/nn_engine.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "rainex/binary_io.hpp"
#include "rainex/parallel.hpp"

namespace rainex::nn {

SearchIndex SearchIndex::build(const features::FeatureStore& store,
                               rdr::PrincipalComponentMap pc_map,
                               std::shared_ptr<const prober::ProberBundle> probers) {
    const std::size_t n = store.size();
    const std::uint32_t dim = store.dim();
    std::vector<float> cols(std::size_t(dim) * n);
    for (std::size_t i = 0; i < n; ++i) {
        auto r = store.row(i);
        for (std::uint32_t p = 0; p < dim; ++p) cols[std::size_t(p) * n + i] = r[p];
    }
    return from_columns(dim, std::move(cols), store.metas(), std::move(pc_map), std::move(probers));
}

SearchIndex SearchIndex::from_columns(std::uint32_t dim, std::vector<float> columns,
                                      std::vector<SegmentMeta> meta,
                                      rdr::PrincipalComponentMap pc_map,
                                      std::shared_ptr<const prober::ProberBundle> probers) {
    if (columns.size() != std::size_t(dim) * meta.size())
        throw ConfigError("index matrix size does not match dim x rows");
    if (probers && !probers->empty() && probers->dim() != dim)
        throw ConfigError("prober dimension does not match index dimension");
    for (const auto& [id, idx] : pc_map.per_concept)
        for (auto i : idx)
            if (i >= dim)
                throw ConfigError("PC map index out of range for concept " + std::to_string(id));
    SearchIndex s;
    s.dim_ = dim;
    s.columns_ = std::move(columns);
    s.meta_ = std::move(meta);
    s.pc_map_ = std::move(pc_map);
    s.probers_ = std::move(probers);
    return s;
}

std::vector<float> SearchIndex::row(std::size_t i) const {
    std::vector<float> r(dim_);
    for (std::uint32_t p = 0; p < dim_; ++p) r[p] = columns_[std::size_t(p) * meta_.size() + i];
    return r;
}

const prober::ProberBundle& SearchIndex::probers() const {
    if (!probers_) throw MissingArtifact("index has no prober bundle");
    return *probers_;
}

std::ptrdiff_t SearchIndex::find(const features::SegmentKey& key) const {
    for (std::size_t i = 0; i < meta_.size(); ++i)
        if (meta_[i].key == key) return std::ptrdiff_t(i);
    return -1;
}

namespace {

// Accumulates sum over coords of (x - q)^2 per row; each row sums coords in the given order.
void accumulate(const SearchIndex& index, std::span<const float> query,
                const std::uint32_t* coords, std::size_t ncoords, bool all,
                std::vector<double>& acc) {
    const std::size_t n = index.size();
    acc.assign(n, 0.0);
    parallel_for(n, index.threads(), [&](std::size_t b, std::size_t e, unsigned) {
        double* out = acc.data();
        for (std::size_t k = 0; k < ncoords; ++k) {
            const std::size_t p = all ? k : coords[k];
            const float* col = index.column(p).data();
            const double q = query[p];
            for (std::size_t i = b; i < e; ++i) {
                double diff = double(col[i]) - q;
                out[i] += diff * diff;
            }
        }
    });
}

void check_query(const SearchIndex& index, std::span<const float> query,
                 const SearchOptions& options) {
    if (index.size() == 0) throw MissingArtifact("search index is empty");
    if (query.size() != index.dim())
        throw ConfigError("query dimension " + std::to_string(query.size()) +
                          " does not match index dimension " + std::to_string(index.dim()));
    if (options.k2 == 0) throw ConfigError("k2 must be >= 1");
}

// k smallest scores, ties by timestamp then row.
std::vector<std::size_t> top_k(const SearchIndex& index, const std::vector<double>& score,
                               std::size_t k) {
    std::vector<std::size_t> idx(score.size());
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    k = std::min(k, idx.size());
    auto less = [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] < score[b];
        auto ta = index.meta(a).key.timestamp, tb = index.meta(b).key.timestamp;
        if (ta != tb) return ta < tb;
        return a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + std::ptrdiff_t(k), idx.end(), less);
    idx.resize(k);
    return idx;
}

NeighborResult assemble(const SearchIndex& index, const std::vector<double>& score,
                        bool score_is_squared, const SearchOptions& options,
                        const SegmentMeta& query_meta) {
    NeighborResult res;
    res.query_meta = query_meta;
    if (options.k2 > index.size()) {
        std::cerr << "warning: k2=" << options.k2 << " exceeds index size " << index.size()
                  << "; returning all rows\n";
        res.k2_clamped = true;
    }
    for (auto r : top_k(index, score, options.k2)) {
        Neighbor nb;
        nb.row = r;
        nb.distance = score_is_squared ? std::sqrt(score[r]) : score[r];
        nb.meta = index.meta(r);
        if (options.annotate && index.has_probers() && !index.probers().empty()) {
            auto all = prober::probe_all(index.probers(), index.row(r));
            all.resize(std::min(all.size(), options.top_concepts));
            nb.concepts = std::move(all);
        }
        res.neighbors.push_back(std::move(nb));
    }
    return res;
}

}  // namespace

std::vector<double> SearchIndex::squared_distances(std::span<const float> query,
                                                   std::span<const std::uint32_t> coords) const {
    std::vector<double> acc;
    accumulate(*this, query, coords.data(), coords.size(), false, acc);
    return acc;
}

std::vector<double> SearchIndex::squared_distances(std::span<const float> query) const {
    std::vector<double> acc;
    accumulate(*this, query, nullptr, dim_, true, acc);
    return acc;
}

NeighborResult search(const SearchIndex& index, std::span<const float> query,
                      const SearchOptions& options, const SegmentMeta& query_meta) {
    return search(index, index.pc_map(), query, options, query_meta);
}

NeighborResult search(const SearchIndex& index, const rdr::PrincipalComponentMap& pc_map,
                      std::span<const float> query, const SearchOptions& options,
                      const SegmentMeta& query_meta) {
    check_query(index, query, options);
    if (options.k1 == 0) throw ConfigError("k1 must be >= 1");
    auto ranked = prober::probe_all(index.probers(), query);

    std::vector<std::uint32_t> coords;
    std::vector<int> used;
    for (const auto& r : ranked) {
        if (used.size() == options.k1) break;
        const auto* pcs = pc_map.find(r.concept_id);
        if (!pcs) continue;  // concept without components (skipped during RDR)
        used.push_back(r.concept_id);
        coords.insert(coords.end(), pcs->begin(), pcs->end());
    }
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    if (!coords.empty() && coords.back() >= index.dim())
        throw ConfigError("PC map index out of range for the search index");

    auto dist = index.squared_distances(query, coords);
    auto res = assemble(index, dist, true, options, query_meta);
    res.concepts_used = std::move(used);
    res.coordinates_used = coords.size();
    ranked.resize(std::min(ranked.size(), options.top_concepts));
    res.query_concepts = std::move(ranked);
    return res;
}

NeighborResult search_full(const SearchIndex& index, std::span<const float> query,
                           const SearchOptions& options, const SegmentMeta& query_meta) {
    check_query(index, query, options);
    auto dist = index.squared_distances(query);
    auto res = assemble(index, dist, true, options, query_meta);
    res.coordinates_used = index.dim();
    if (options.annotate && index.has_probers() && !index.probers().empty()) {
        auto ranked = prober::probe_all(index.probers(), query);
        ranked.resize(std::min(ranked.size(), options.top_concepts));
        res.query_concepts = std::move(ranked);
    }
    return res;
}

PcaProjection::PcaProjection(const SearchIndex& index, std::size_t d, const Options& options)
    : dim_(index.dim()), d_(d) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    if (d == 0) throw ConfigError("PCA needs at least one component");
    if (d > dim_) throw ConfigError("PCA components exceed the feature dimension");
    const std::size_t n = index.size();
    if (n == 0) throw MissingArtifact("cannot fit PCA on an empty index");

    // rows used for fitting: all, or an evenly spaced subset
    std::vector<std::size_t> fit_rows;
    std::size_t m = std::min(n, options.max_fit_rows);
    for (std::size_t i = 0; i < m; ++i) fit_rows.push_back(i * n / m);

    MatrixXd x(m, dim_);
    for (std::size_t p = 0; p < dim_; ++p) {
        auto col = index.column(p);
        for (std::size_t i = 0; i < m; ++i) x(Eigen::Index(i), Eigen::Index(p)) = col[fit_rows[i]];
    }
    VectorXd mu = x.colwise().mean();
    x.rowwise() -= mu.transpose();
    mean_.assign(mu.data(), mu.data() + dim_);

    if (d > m) throw ConfigError("PCA components exceed the number of fitted rows");
    const std::size_t width = std::min<std::size_t>(std::min<std::size_t>(m, dim_), d + options.oversample);
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    MatrixXd q(dim_, width);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = nd(rng);
    auto orthonormal = [&](const MatrixXd& a) -> MatrixXd {
        return Eigen::HouseholderQR<MatrixXd>(a).householderQ() * MatrixXd::Identity(a.rows(), a.cols());
    };
    q = orthonormal(x.transpose() * (x * q));
    for (int it = 0; it < options.power_iterations; ++it) q = orthonormal(x.transpose() * (x * q));
    // Rayleigh-Ritz: order the basis by explained variance
    MatrixXd xq = x * q;
    MatrixXd small = xq.transpose() * xq / double(std::max<std::size_t>(m, 1));
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(small);
    MatrixXd rot = es.eigenvectors().rowwise().reverse();
    q = q * rot;
    q = q.leftCols(Eigen::Index(d)).eval();
    VectorXd ev = es.eigenvalues().reverse();
    eigenvalues_.assign(ev.data(), ev.data() + d);
    axes_.resize(dim_ * d);
    for (std::size_t p = 0; p < dim_; ++p)
        for (std::size_t j = 0; j < d; ++j) axes_[p * d + j] = q(Eigen::Index(p), Eigen::Index(j));

    projected_.assign(n * d, 0.0);
    for (std::size_t p = 0; p < dim_; ++p) {
        auto col = index.column(p);
        const double* ax = axes_.data() + p * d;
        for (std::size_t i = 0; i < n; ++i) {
            double c = double(col[i]) - mean_[p];
            if (c == 0.0) continue;
            double* out = projected_.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) out[j] += c * ax[j];
        }
    }
}

std::vector<double> PcaProjection::project(std::span<const float> x) const {
    if (x.size() != dim_) throw ConfigError("PCA input dimension mismatch");
    std::vector<double> out(d_, 0.0);
    for (std::size_t p = 0; p < dim_; ++p) {
        double c = double(x[p]) - mean_[p];
        const double* ax = axes_.data() + p * d_;
        for (std::size_t j = 0; j < d_; ++j) out[j] += c * ax[j];
    }
    return out;
}

NeighborResult PcaProjection::search(const SearchIndex& index, std::span<const float> query,
                                     const SearchOptions& options,
                                     const SegmentMeta& query_meta) const {
    check_query(index, query, options);
    if (projected_.size() != index.size() * d_)
        throw ConfigError("PCA projection was fitted on a different index");
    auto qp = project(query);
    std::vector<double> dist(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        const double* r = projected_.data() + i * d_;
        double acc = 0.0;
        for (std::size_t j = 0; j < d_; ++j) {
            double diff = r[j] - qp[j];
            acc += diff * diff;
        }
        dist[i] = acc;
    }
    auto res = assemble(index, dist, true, options, query_meta);
    res.coordinates_used = d_;
    return res;
}

NeighborResult search_pca(const SearchIndex& index, std::span<const float> query, std::size_t k2,
                          std::size_t d) {
    PcaProjection pca(index, d);
    SearchOptions opt;
    opt.k2 = k2;
    return pca.search(index, query, opt);
}

NeighborResult temporal_filter(NeighborResult result, Timestamp query_time, Timestamp min_gap) {
    if (min_gap < 0) throw ConfigError("temporal gap must be >= 0");
    if (min_gap == 0) return result;
    std::vector<Neighbor> kept;
    for (auto& nb : result.neighbors) {
        Timestamp dt = nb.meta.key.timestamp - query_time;
        if (dt < 0) dt = -dt;
        if (dt >= min_gap) kept.push_back(std::move(nb));
    }
    result.filter_exhausted = kept.empty();
    result.neighbors = std::move(kept);
    return result;
}

NeighborResult search_filtered(const SearchIndex& index, std::span<const float> query,
                               Timestamp query_time, Timestamp min_gap,
                               const SearchOptions& options, const SegmentMeta& query_meta) {
    constexpr std::size_t kOverFetch = 4;
    SearchOptions wide = options;
    wide.annotate = false;
    wide.k2 = std::min(index.size(), options.k2 * kOverFetch);
    NeighborResult res;
    for (;;) {
        res = temporal_filter(search(index, query, wide, query_meta), query_time, min_gap);
        if (res.neighbors.size() >= options.k2 || wide.k2 >= index.size()) break;
        wide.k2 = std::min(index.size(), wide.k2 * 2);
    }
    if (res.neighbors.size() > options.k2) res.neighbors.resize(options.k2);
    res.k2_clamped = options.k2 > index.size();
    if (options.annotate && index.has_probers()) {
        for (auto& nb : res.neighbors) {
            auto all = prober::probe_all(index.probers(), index.row(nb.row));
            all.resize(std::min(all.size(), options.top_concepts));
            nb.concepts = std::move(all);
        }
    }
    return res;
}

double time_weight(Timestamp a, Timestamp b, double epsilon) {
    double hours = std::abs(double(a - b)) / double(kHour);
    double s = epsilon + hours;
    return 1.0 / (s * s);
}

NeighborResult search_time_weighted(const SearchIndex& index, std::span<const float> query,
                                    Timestamp query_time, const SearchOptions& options,
                                    const SegmentMeta& query_meta) {
    check_query(index, query, options);
    auto dist = index.squared_distances(query);
    for (std::size_t i = 0; i < dist.size(); ++i)
        dist[i] = time_weight(index.meta(i).key.timestamp, query_time) * std::sqrt(dist[i]);
    auto res = assemble(index, dist, false, options, query_meta);
    res.coordinates_used = index.dim();
    return res;
}

void write_index(const std::filesystem::path& path, const features::FeatureStore& store,
                 const std::string& pc_map_file, const std::string& prober_file) {
    io::BinaryWriter out(path);
    out.magic("NIDX");
    out.put<std::uint32_t>(1);
    out.put_string(pc_map_file);
    out.put_string(prober_file);
    features::write_feature_store(out, store);
    out.commit();
}

IndexFile read_index_file(const std::filesystem::path& path) {
    io::BinaryReader in(path);
    in.expect_magic("NIDX");
    if (in.get<std::uint32_t>() != 1) throw FormatError(path.string() + ": unsupported version");
    IndexFile f;
    f.pc_map_file = in.get_string();
    f.prober_file = in.get_string();
    f.store = features::read_feature_store(in);
    in.expect_end();
    return f;
}

SearchIndex load_index(const std::filesystem::path& path) {
    auto f = read_index_file(path);
    auto dir = path.parent_path();
    auto pcs = rdr::read_pc_map(dir / f.pc_map_file);
    auto probers = std::make_shared<const prober::ProberBundle>(prober::read_bundle(dir / f.prober_file));
    return SearchIndex::build(f.store, std::move(pcs), std::move(probers));
}

}  // namespace rainex::nn
