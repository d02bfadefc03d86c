#include "rainex/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "rainex/error.hpp"

namespace rainex::eval {

double macro_f1(std::span<const int> predictions, std::span<const int> labels, int classes) {
    if (classes <= 0) throw ConfigError("macro F1 needs at least one class");
    if (predictions.size() != labels.size())
        throw DataError("prediction and label counts differ");
    std::vector<double> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int p = predictions[i], y = labels[i];
        if (p < 0 || p >= classes || y < 0 || y >= classes)
            throw DataError("class index out of range at sample " + std::to_string(i));
        if (p == y) {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn[y] += 1;
        }
    }
    double sum = 0.0;
    for (int c = 0; c < classes; ++c) {
        double denom = 2 * tp[c] + fp[c] + fn[c];
        sum += denom > 0 ? 2 * tp[c] / denom : 0.0;
    }
    return sum / classes;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size())
        throw DataError("prediction and label counts differ");
    if (labels.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) ok += predictions[i] == labels[i];
    return double(ok) / double(labels.size());
}

namespace {

double f1_term(double hit, double miss, double fa) {
    double denom = hit + 0.5 * (miss + fa);
    return denom > 0 ? hit / denom : 1.0;
}

void check_same_grid(int h1, int w1, const model::ClassMap& truth) {
    if (h1 != truth.height || w1 != truth.width)
        throw DataError("prediction and truth grids differ in size");
}

}  // namespace

double modified_f1(const model::ClassMap& prediction, const model::ClassMap& truth) {
    check_same_grid(prediction.height, prediction.width, truth);
    double sum = 0.0;
    for (int t = 1; t < model::kNumClasses; ++t) {
        double hit = 0, miss = 0, fa = 0;
        for (std::size_t i = 0; i < truth.classes.size(); ++i) {
            bool p = prediction.classes[i] >= t, y = truth.classes[i] >= t;
            hit += p && y;
            miss += !p && y;
            fa += p && !y;
        }
        sum += f1_term(hit, miss, fa);
    }
    return sum / (model::kNumClasses - 1);
}

double soft_modified_f1(const model::Logits& logits, const model::ClassMap& truth) {
    check_same_grid(logits.height, logits.width, truth);
    if (logits.classes != model::kNumClasses)
        throw DataError("modified F1 needs logits over the 8 rain classes");
    const std::size_t plane = logits.plane();
    // exceed[t][i] = P(class >= t) under the pixel softmax
    std::vector<double> exceed(plane * model::kNumClasses, 0.0);
    std::vector<double> prob(model::kNumClasses);
    for (std::size_t i = 0; i < plane; ++i) {
        double mx = logits.values[i];
        for (int k = 1; k < model::kNumClasses; ++k) mx = std::max(mx, logits.values[k * plane + i]);
        double z = 0.0;
        for (int k = 0; k < model::kNumClasses; ++k) {
            prob[k] = std::exp(logits.values[k * plane + i] - mx);
            z += prob[k];
        }
        double acc = 0.0;
        for (int k = model::kNumClasses - 1; k >= 1; --k) {
            acc += prob[k] / z;
            exceed[k * plane + i] = acc;
        }
    }
    double sum = 0.0;
    for (int t = 1; t < model::kNumClasses; ++t) {
        double hit = 0, miss = 0, fa = 0;
        for (std::size_t i = 0; i < plane; ++i) {
            double p = exceed[t * plane + i];
            if (truth.classes[i] >= t) {
                hit += p;
                miss += 1.0 - p;
            } else {
                fa += p;
            }
        }
        sum += f1_term(hit, miss, fa);
    }
    return sum / (model::kNumClasses - 1);
}

double precision_at_k(std::span<const std::set<int>> retrieved, const std::set<int>& query,
                      std::size_t k) {
    if (k == 0) throw ConfigError("precision@k needs k >= 1");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < std::min(k, retrieved.size()); ++i) {
        for (int c : retrieved[i])
            if (query.count(c)) {
                ++correct;
                break;
            }
    }
    return double(correct) / double(k);
}

std::vector<float> PlantedCorpus::row(std::size_t i) const {
    std::vector<float> r(dim);
    for (std::uint32_t p = 0; p < dim; ++p) r[p] = columns[std::size_t(p) * size() + i];
    return r;
}

PlantedCorpus make_planted_corpus(const PlantedConfig& cfg) {
    if (cfg.concepts < 1) throw ConfigError("planted corpus needs at least one concept");
    if (std::uint64_t(cfg.support) * std::uint64_t(cfg.concepts) > cfg.dim)
        throw ConfigError("concept supports do not fit in the feature dimension");
    if (cfg.rows == 0) throw ConfigError("planted corpus needs rows");
    std::mt19937_64 rng(cfg.seed);

    PlantedCorpus c;
    c.dim = cfg.dim;
    std::vector<std::uint32_t> perm(cfg.dim);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> owner(cfg.dim, -1);
    for (int k = 0; k < cfg.concepts; ++k) {
        std::vector<std::uint32_t> s(perm.begin() + std::ptrdiff_t(k) * cfg.support,
                                     perm.begin() + std::ptrdiff_t(k + 1) * cfg.support);
        std::sort(s.begin(), s.end());
        for (auto p : s) owner[p] = k;
        c.support.push_back(std::move(s));
        c.labels.concepts.push_back({k, "planted-" + std::to_string(k), prober::ConceptSource::Synth});
    }

    const std::size_t total = cfg.rows + cfg.queries;
    std::uniform_int_distribution<int> pick(0, cfg.concepts - 1);
    std::vector<int> member(total);
    for (auto& m : member) m = pick(rng);

    const Timestamp base = 1'577'836'800;  // 2020-01-01T00:00Z
    for (std::size_t i = 0; i < total; ++i) {
        features::SegmentMeta meta;
        meta.key = {base + Timestamp(i) * kFrameStep, 1};
        meta.bbox = {0, 0, 1, 1};
        meta.pixels = 1;
        c.labels.assignments[meta.key] = {member[i]};
        if (i < cfg.rows) c.metas.push_back(meta);
    }

    std::normal_distribution<double> noise(0.0, cfg.noise);
    c.columns.resize(std::size_t(cfg.dim) * cfg.rows);
    std::vector<float> query_values(std::size_t(cfg.queries) * cfg.dim);
    for (std::uint32_t p = 0; p < cfg.dim; ++p) {
        float* col = c.columns.data() + std::size_t(p) * cfg.rows;
        for (std::size_t i = 0; i < total; ++i) {
            double mean = owner[p] == member[i] ? cfg.signal_mean : cfg.background_mean;
            float v = float(std::max(0.0, mean + noise(rng)));
            if (i < cfg.rows)
                col[i] = v;
            else
                query_values[(i - cfg.rows) * cfg.dim + p] = v;
        }
    }
    c.queries = features::FeatureStore(cfg.dim);
    for (std::size_t q = 0; q < cfg.queries; ++q) {
        features::SegmentMeta meta;
        meta.key = {base + Timestamp(cfg.rows + q) * kFrameStep, 1};
        meta.bbox = {0, 0, 1, 1};
        meta.pixels = 1;
        c.queries.add(std::span<const float>(query_values.data() + q * cfg.dim, cfg.dim), meta);
    }
    return c;
}

CorpusModels fit_corpus_models(const PlantedCorpus& corpus, const BenchConfig& config) {
    CorpusModels out;
    out.probers = prober::ProberBundle(corpus.dim);
    std::mt19937_64 rng(config.seed);

    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (int c : corpus.labels.assignments.at(corpus.metas[i].key)) members[c].push_back(i);

    std::vector<std::size_t> pcnse_dims;
    for (const auto& m : config.methods)
        if (m == "pcnse") pcnse_dims = config.dims;
    for (auto d : pcnse_dims) out.pc_maps[d].d = std::uint32_t(std::min<std::size_t>(d, corpus.dim));

    for (const auto& concept_info : corpus.labels.concepts) {
        const int id = concept_info.id;
        auto pos = members[id];
        std::vector<std::size_t> neg;
        for (const auto& [other, rows] : members)
            if (other != id) neg.insert(neg.end(), rows.begin(), rows.end());
        std::sort(neg.begin(), neg.end());
        std::shuffle(pos.begin(), pos.end(), rng);
        std::shuffle(neg.begin(), neg.end(), rng);
        std::size_t take = config.prober_rows ? std::min(config.prober_rows, pos.size()) : pos.size();
        pos.resize(take);
        neg.resize(std::min(neg.size(), take));
        std::sort(pos.begin(), pos.end());
        std::sort(neg.begin(), neg.end());

        std::vector<std::vector<float>> pos_rows, neg_rows;
        for (auto i : pos) pos_rows.push_back(corpus.row(i));
        for (auto i : neg) neg_rows.push_back(corpus.row(i));
        prober::RowSet p(pos_rows.begin(), pos_rows.end()), n(neg_rows.begin(), neg_rows.end());

        prober::SgdConfig sgd;
        sgd.seed = config.seed;
        out.probers.add(prober::train_prober(id, p, n, corpus.dim, sgd).prober);
        for (auto& [d, map] : out.pc_maps) {
            auto sel = rdr::select_components(p, n, d);
            auto idx = sel.ranked;
            std::sort(idx.begin(), idx.end());
            map.per_concept[id] = std::move(idx);
        }
    }
    return out;
}

nn::SearchIndex index_corpus(PlantedCorpus& corpus,
                             std::shared_ptr<const prober::ProberBundle> probers) {
    return nn::SearchIndex::from_columns(corpus.dim, std::move(corpus.columns), corpus.metas, {},
                                         std::move(probers));
}

const BenchRow* BenchReport::find(const std::string& method, std::size_t d) const {
    for (const auto& r : rows)
        if (r.method == method && r.dims == d) return &r;
    return nullptr;
}

std::string machine_descriptor() {
    std::string model = "unknown CPU";
    std::ifstream in("/proc/cpuinfo");
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("model name", 0) == 0) {
            auto pos = line.find(':');
            if (pos != std::string::npos) model = line.substr(pos + 2);
            break;
        }
    }
    return model + " with " + std::to_string(std::thread::hardware_concurrency()) +
           " logical cores";
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename Fn>
BenchRow measure(const std::string& method, std::size_t d, const PlantedCorpus& corpus,
                 const BenchConfig& config, Fn&& run) {
    constexpr std::array<std::size_t, 3> ks{3, 5, 10};
    BenchRow row;
    row.method = method;
    row.dims = d;
    std::vector<double> times;
    std::array<std::vector<double>, 3> prec;
    for (std::size_t q = 0; q < corpus.queries.size(); ++q) {
        auto query = corpus.queries.row(q);
        nn::NeighborResult res;
        std::vector<double> passes;
        for (std::size_t r = 0; r < std::max<std::size_t>(1, config.repeats); ++r) {
            auto t0 = std::chrono::steady_clock::now();
            res = run(query);
            passes.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        times.push_back(median(passes));
        std::vector<std::set<int>> got;
        for (const auto& nb : res.neighbors) got.push_back(corpus.labels.assignments.at(nb.meta.key));
        const auto& truth = corpus.labels.assignments.at(corpus.queries.meta(q).key);
        for (std::size_t j = 0; j < ks.size(); ++j) prec[j].push_back(precision_at_k(got, truth, ks[j]));
    }
    row.median_seconds = median(times);
    row.mean_seconds = std::accumulate(times.begin(), times.end(), 0.0) / double(times.size());
    for (std::size_t j = 0; j < ks.size(); ++j) {
        double m = std::accumulate(prec[j].begin(), prec[j].end(), 0.0) / double(prec[j].size());
        double var = 0.0;
        for (double v : prec[j]) var += (v - m) * (v - m);
        row.precision[j] = m;
        row.precision_std[j] = std::sqrt(var / double(prec[j].size()));
    }
    return row;
}

}  // namespace

BenchReport run_benchmark(const nn::SearchIndex& index, const PlantedCorpus& corpus,
                          const CorpusModels& models, const BenchConfig& config) {
    if (corpus.queries.size() < 20)
        throw ConfigError("benchmark needs at least 20 queries, got " +
                          std::to_string(corpus.queries.size()));
    if (index.size() == 0) throw MissingArtifact("benchmark index is empty");
    BenchReport report;
    report.environment = machine_descriptor();
    report.seed = config.seed;
    report.rows_indexed = index.size();
    report.feature_dim = index.dim();
    report.queries = corpus.queries.size();

    nn::SearchOptions opt;
    opt.k1 = config.k1;
    opt.k2 = 10;
    opt.annotate = false;
    for (const auto& method : config.methods) {
        if (method == "full") {
            report.rows.push_back(measure("full", index.dim(), corpus, config, [&](auto q) {
                return nn::search_full(index, q, opt);
            }));
        } else if (method == "pca") {
            for (auto d : config.dims) {
                if (d > index.dim() || d > index.size()) continue;
                nn::PcaProjection::Options po;
                po.seed = config.seed;
                nn::PcaProjection pca(index, d, po);
                report.rows.push_back(measure("pca", d, corpus, config, [&](auto q) {
                    return pca.search(index, q, opt);
                }));
            }
        } else if (method == "pcnse") {
            for (auto d : config.dims) {
                auto it = models.pc_maps.find(d);
                if (it == models.pc_maps.end())
                    throw MissingArtifact("no PC map fitted for d=" + std::to_string(d));
                report.rows.push_back(measure("pcnse", d, corpus, config, [&](auto q) {
                    return nn::search(index, it->second, q, opt);
                }));
            }
        } else {
            throw ConfigError("unknown benchmark method '" + method + "'");
        }
    }
    return report;
}

std::string to_markdown(const BenchReport& r) {
    std::ostringstream out;
    out << "rows=" << r.rows_indexed << " dim=" << r.feature_dim << " queries=" << r.queries
        << " seed=" << r.seed << "\n"
        << "machine: " << r.environment << "\n\n"
        << "| method | d | median s/query | P@3 | P@5 | P@10 |\n"
        << "|---|---|---|---|---|---|\n";
    out.setf(std::ios::fixed);
    for (const auto& row : r.rows) {
        out.precision(6);
        out << "| " << row.method << " | " << row.dims << " | " << row.median_seconds;
        out.precision(4);
        for (int j = 0; j < 3; ++j)
            out << " | " << row.precision[j] << " ± " << row.precision_std[j];
        out << " |\n";
    }
    const BenchRow* full = nullptr;
    for (const auto& row : r.rows)
        if (row.method == "full") full = &row;
    if (full) {
        out.precision(2);
        for (const auto& row : r.rows)
            if (row.method != "full" && row.median_seconds > 0)
                out << "\nspeedup " << row.method << "-" << row.dims << ": "
                    << full->median_seconds / row.median_seconds << "x";
        out << "\n";
    }
    return out.str();
}

std::string to_json(const BenchReport& r) {
    nlohmann::json j;
    j["environment"] = r.environment;
    j["seed"] = r.seed;
    j["rows_indexed"] = r.rows_indexed;
    j["feature_dim"] = r.feature_dim;
    j["queries"] = r.queries;
    j["rows"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        j["rows"].push_back({{"method", row.method},
                             {"dims", row.dims},
                             {"median_seconds", row.median_seconds},
                             {"mean_seconds", row.mean_seconds},
                             {"precision_at_3", row.precision[0]},
                             {"precision_at_5", row.precision[1]},
                             {"precision_at_10", row.precision[2]},
                             {"precision_std", row.precision_std}});
    }
    return j.dump(2);
}

}  // namespace rainex::eval
