#include "rainex/prober.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "rainex/binary_io.hpp"
#include "rainex/csv.hpp"

namespace rainex::prober {

namespace {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double dot(std::span<const float> x, std::span<const double> w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += double(x[i]) * w[i];
    return acc;
}

double dot(std::span<const float> x, std::span<const float> w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += double(x[i]) * double(w[i]);
    return acc;
}

template <typename T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
    std::shuffle(v.begin(), v.end(), rng);
}

Timestamp parse_time_field(const std::string& s) {
    if (!s.empty() && s.find('-') != std::string::npos) return parse_iso8601(s);
    try {
        return std::stoll(s);
    } catch (const std::exception&) {
        throw FormatError("bad timestamp '" + s + "'");
    }
}

}  // namespace

std::string to_string(ConceptSource s) {
    switch (s) {
        case ConceptSource::Posthoc: return "POSTHOC";
        case ConceptSource::Workflow: return "WORKFLOW";
        case ConceptSource::Kmeans: return "KMEANS";
        case ConceptSource::Gmm: return "GMM";
        case ConceptSource::Som: return "SOM";
        case ConceptSource::Synth: return "SYNTH";
    }
    return "SYNTH";
}

ConceptSource parse_source(const std::string& text) {
    for (auto s : {ConceptSource::Posthoc, ConceptSource::Workflow, ConceptSource::Kmeans,
                   ConceptSource::Gmm, ConceptSource::Som, ConceptSource::Synth})
        if (to_string(s) == text) return s;
    throw FormatError("unknown concept source '" + text + "'");
}

const Concept* ConceptLabelSet::find(int id) const {
    for (const auto& c : concepts)
        if (c.id == id) return &c;
    return nullptr;
}

void ConceptLabelSet::validate() const {
    for (const auto& [key, ids] : assignments)
        for (int id : ids)
            if (!find(id))
                throw DataError("label for segment " + std::to_string(key.segment_id) + " at " +
                                format_iso8601(key.timestamp) + " names unknown concept " +
                                std::to_string(id));
}

ConceptLabelSet read_labels(const std::filesystem::path& labels_csv,
                            const std::filesystem::path& concepts_csv) {
    ConceptLabelSet set;
    for (const auto& row : csv::read(concepts_csv, {"concept_id", "name", "source"}))
        set.concepts.push_back({std::stoi(row[0]), row[1], parse_source(row[2])});
    for (const auto& row : csv::read(labels_csv, {"timestamp", "segment_id", "concept_id"})) {
        SegmentKey key{parse_time_field(row[0]), std::stoi(row[1])};
        set.assignments[key].insert(std::stoi(row[2]));
    }
    set.validate();
    return set;
}

void write_labels(const std::filesystem::path& labels_csv,
                  const std::filesystem::path& concepts_csv, const ConceptLabelSet& labels) {
    for (const auto* p : {&labels_csv, &concepts_csv})
        if (p->has_parent_path()) std::filesystem::create_directories(p->parent_path());
    {
        std::ofstream out(concepts_csv, std::ios::trunc);
        out << "concept_id,name,source\n";
        for (const auto& c : labels.concepts)
            out << c.id << ',' << csv::escape(c.name) << ',' << to_string(c.source) << '\n';
        if (!out) throw Error("cannot write " + concepts_csv.string());
    }
    std::ofstream out(labels_csv, std::ios::trunc);
    out << "timestamp,segment_id,concept_id\n";
    for (const auto& [key, ids] : labels.assignments)
        for (int id : ids) out << format_iso8601(key.timestamp) << ',' << key.segment_id << ',' << id << '\n';
    if (!out) throw Error("cannot write " + labels_csv.string());
}

SkipConcept::SkipConcept(int concept_id, std::size_t positives, std::size_t required)
    : Error("concept " + std::to_string(concept_id) + " has " + std::to_string(positives) +
            " positives, needs " + std::to_string(required)),
      concept_id_(concept_id),
      positives_(positives) {}

std::pair<std::size_t, std::size_t> split_counts(std::size_t n, double validation_fraction) {
    auto val = std::size_t(std::ceil(validation_fraction * double(n) - 1e-9));
    val = std::min(val, n);
    return {n - val, val};
}

BinaryDataset build_binary_dataset(const ConceptLabelSet& labels, int concept_id,
                                   const features::FeatureStore& store,
                                   const DatasetConfig& config) {
    if (!labels.find(concept_id)) throw NotFound("unknown concept " + std::to_string(concept_id));
    std::vector<std::size_t> positives;
    std::map<int, std::vector<std::size_t>> strata;  // -1 = unlabelled
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto it = labels.assignments.find(store.meta(i).key);
        if (it != labels.assignments.end() && it->second.count(concept_id)) {
            positives.push_back(i);
        } else {
            int stratum = (it == labels.assignments.end() || it->second.empty())
                              ? -1
                              : *it->second.begin();
            strata[stratum].push_back(i);
        }
    }
    if (positives.empty() || positives.size() < config.min_samples)
        throw SkipConcept(concept_id, positives.size(), config.min_samples);

    std::mt19937_64 rng(config.seed);
    std::size_t pool = 0;
    for (const auto& [_, rows] : strata) pool += rows.size();
    auto wanted = std::min(pool, std::size_t(std::llround(config.negative_ratio * positives.size())));

    // proportional allocation, largest remainder
    std::vector<std::pair<int, std::size_t>> quota;
    std::vector<std::pair<double, int>> remainders;
    std::size_t assigned = 0;
    for (const auto& [s, rows] : strata) {
        double exact = pool ? double(wanted) * rows.size() / pool : 0.0;
        auto q = std::size_t(std::floor(exact));
        quota.push_back({s, q});
        assigned += q;
        remainders.push_back({exact - q, s});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < wanted && i < remainders.size(); ++i) {
        for (auto& [s, q] : quota)
            if (s == remainders[i].second && q < strata[s].size()) {
                ++q;
                ++assigned;
            }
    }
    std::vector<std::size_t> negatives;
    for (auto& [s, q] : quota) {
        auto rows = strata[s];
        shuffle_in_place(rows, rng);
        negatives.insert(negatives.end(), rows.begin(), rows.begin() + std::ptrdiff_t(q));
    }

    BinaryDataset ds;
    ds.concept_id = concept_id;
    auto split = [&](std::vector<std::size_t> rows, std::vector<std::size_t>& train,
                     std::vector<std::size_t>& val) {
        shuffle_in_place(rows, rng);
        auto [n_train, n_val] = split_counts(rows.size(), config.validation_fraction);
        train.assign(rows.begin(), rows.begin() + std::ptrdiff_t(n_train));
        val.assign(rows.begin() + std::ptrdiff_t(n_train), rows.end());
        (void)n_val;
    };
    split(positives, ds.train_pos, ds.val_pos);
    split(negatives, ds.train_neg, ds.val_neg);
    return ds;
}

RowSet gather_rows(const features::FeatureStore& store, std::span<const std::size_t> rows) {
    RowSet out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(store.row(r));
    return out;
}

double CalibratedFold::margin(std::span<const float> x) const {
    return dot(x, std::span<const float>(weights)) + double(bias);
}

double CalibratedFold::probability(std::span<const float> x) const {
    return sigmoid(double(platt_a) * margin(x) + double(platt_b));
}

LinearModel train_sgd_logistic(const RowSet& positives, const RowSet& negatives, std::size_t dim,
                               const SgdConfig& cfg) {
    if (positives.empty() || negatives.empty())
        throw DataError("training needs both positive and negative samples");
    struct Sample {
        std::span<const float> x;
        double y;
    };
    std::vector<Sample> data;
    data.reserve(positives.size() + negatives.size());
    for (auto r : positives) data.push_back({r, 1.0});
    for (auto r : negatives) data.push_back({r, -1.0});
    for (const auto& s : data)
        if (s.x.size() != dim) throw ConfigError("sample dimension mismatch");

    LinearModel m;
    m.weights.assign(dim, 0.0);
    std::vector<double> q(dim, 0.0);  // cumulative L1 actually applied per weight
    double u = 0.0;                   // cumulative L1 that could have been applied
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    double best_loss = std::numeric_limits<double>::infinity();
    int no_improve = 0;
    std::uint64_t t = 1;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_in_place(order, rng);
        double sum_loss = 0.0;
        for (auto idx : order) {
            const auto& s = data[idx];
            double eta = cfg.eta0 / std::pow(double(t), cfg.power_t);
            double z = s.y * (dot(s.x, m.weights) + m.bias);
            sum_loss += softplus(-z);
            double dloss = -s.y * sigmoid(-z);
            if (dloss != 0.0) {
                double step = -eta * dloss;
                for (std::size_t i = 0; i < dim; ++i)
                    if (s.x[i] != 0.0f) m.weights[i] += step * double(s.x[i]);
                m.bias += step;
            }
            if (cfg.l1 > 0.0) {
                u += eta * cfg.l1;
                for (std::size_t i = 0; i < dim; ++i) {
                    if (s.x[i] == 0.0f) continue;
                    double w0 = m.weights[i];
                    if (w0 > 0.0)
                        m.weights[i] = std::max(0.0, w0 - (u + q[i]));
                    else if (w0 < 0.0)
                        m.weights[i] = std::min(0.0, w0 + (u - q[i]));
                    q[i] += m.weights[i] - w0;
                }
            }
            ++t;
        }
        m.epochs = epoch + 1;
        double loss = sum_loss / double(data.size());
        if (loss > best_loss - cfg.tol)
            ++no_improve;
        else
            no_improve = 0;
        best_loss = std::min(best_loss, loss);
        if (no_improve >= cfg.n_iter_no_change) {
            m.converged = true;
            break;
        }
    }
    return m;
}

namespace {

struct PlattTargets {
    double pos, neg;
};

PlattTargets corrected_targets(std::span<const int> labels) {
    double np = 0, nn = 0;
    for (int y : labels) (y > 0 ? np : nn) += 1;
    return {(np + 1.0) / (np + 2.0), 1.0 / (nn + 2.0)};
}

}  // namespace

double platt_nll(std::span<const double> margins, std::span<const int> labels, PlattParams p) {
    auto tg = corrected_targets(labels);
    double f = 0.0;
    for (std::size_t i = 0; i < margins.size(); ++i) {
        double t = labels[i] > 0 ? tg.pos : tg.neg;
        double z = p.a * margins[i] + p.b;
        f += softplus(z) - t * z;
    }
    return f;
}

PlattParams fit_platt(std::span<const double> margins, std::span<const int> labels) {
    if (margins.size() != labels.size()) throw ConfigError("margin/label length mismatch");
    if (margins.empty()) return {};
    auto tg = corrected_targets(labels);
    double np = 0, nn = 0;
    for (int y : labels) (y > 0 ? np : nn) += 1;

    PlattParams p{0.0, std::log((np + 1.0) / (nn + 1.0))};
    double f = platt_nll(margins, labels, p);
    constexpr int kMaxIter = 100;
    constexpr double kMinStep = 1e-10;
    constexpr double kRidge = 1e-12;
    constexpr double kEps = 1e-5;
    for (int iter = 0; iter < kMaxIter; ++iter) {
        double g_a = 0, g_b = 0, h_aa = kRidge, h_ab = 0, h_bb = kRidge;
        for (std::size_t i = 0; i < margins.size(); ++i) {
            double t = labels[i] > 0 ? tg.pos : tg.neg;
            double s = sigmoid(p.a * margins[i] + p.b);
            double d = s - t;
            double w = s * (1.0 - s);
            g_a += d * margins[i];
            g_b += d;
            h_aa += w * margins[i] * margins[i];
            h_ab += w * margins[i];
            h_bb += w;
        }
        if (std::abs(g_a) < kEps && std::abs(g_b) < kEps) break;
        double det = h_aa * h_bb - h_ab * h_ab;
        double da = -(h_bb * g_a - h_ab * g_b) / det;
        double db = -(-h_ab * g_a + h_aa * g_b) / det;
        double gd = g_a * da + g_b * db;
        double step = 1.0;
        bool moved = false;
        while (step >= kMinStep) {
            PlattParams cand{p.a + step * da, p.b + step * db};
            double fc = platt_nll(margins, labels, cand);
            if (fc < f + 1e-4 * step * gd) {
                p = cand;
                f = fc;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if (!moved) break;
    }
    if (p.a < 0.0) {
        // anti-correlated fold: fall back to the best constant probability
        double tsum = 0.0;
        for (int y : labels) tsum += y > 0 ? tg.pos : tg.neg;
        double n = double(labels.size());
        p = {0.0, std::log(tsum / (n - tsum))};
    }
    return p;
}

TrainedProber train_prober(int concept_id, const RowSet& positives, const RowSet& negatives,
                           std::size_t dim, const SgdConfig& config) {
    if (positives.empty() || negatives.empty())
        throw DataError("concept " + std::to_string(concept_id) +
                        ": training needs both classes to be non-empty");
    std::mt19937_64 rng(config.seed);
    auto assign = [&](std::size_t n) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        shuffle_in_place(idx, rng);
        std::vector<int> fold(n);
        for (std::size_t i = 0; i < n; ++i) fold[idx[i]] = int(i % kFolds);
        return fold;
    };
    auto pos_fold = assign(positives.size());
    auto neg_fold = assign(negatives.size());

    TrainedProber out;
    out.prober.concept_id = concept_id;
    std::vector<double> mean_w(dim, 0.0);
    for (int f = 0; f < kFolds; ++f) {
        RowSet tp, tn, hp, hn;
        for (std::size_t i = 0; i < positives.size(); ++i)
            (pos_fold[i] == f ? hp : tp).push_back(positives[i]);
        for (std::size_t i = 0; i < negatives.size(); ++i)
            (neg_fold[i] == f ? hn : tn).push_back(negatives[i]);
        // tiny classes can leave a training split empty; fall back to the full class
        if (tp.empty()) tp = positives;
        if (tn.empty()) tn = negatives;

        SgdConfig fold_cfg = config;
        fold_cfg.seed = config.seed + std::uint64_t(f) + 1;
        auto lin = train_sgd_logistic(tp, tn, dim, fold_cfg);
        out.converged = out.converged && lin.converged;
        out.epochs[f] = lin.epochs;

        auto& fold = out.prober.folds[f];
        fold.weights.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) fold.weights[i] = float(lin.weights[i]);
        fold.bias = float(lin.bias);

        std::vector<double> margins;
        std::vector<int> labels;
        for (auto r : hp) {
            margins.push_back(fold.margin(r));
            labels.push_back(1);
        }
        for (auto r : hn) {
            margins.push_back(fold.margin(r));
            labels.push_back(0);
        }
        auto platt = fit_platt(margins, labels);
        fold.platt_a = float(platt.a);
        fold.platt_b = float(platt.b);
        for (std::size_t i = 0; i < dim; ++i) mean_w[i] += double(fold.weights[i]) / kFolds;
    }
    double norm = 0.0;
    for (double v : mean_w) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0)
        throw DataError("concept " + std::to_string(concept_id) +
                        ": every fold weight is zero, the concept vector is undefined");
    out.prober.cav.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) out.prober.cav[i] = float(mean_w[i] / norm);
    return out;
}

ProbeResult probe(const ConceptProber& prober, std::span<const float> feature) {
    if (feature.size() != prober.dim())
        throw ConfigError("feature dimension " + std::to_string(feature.size()) +
                          " does not match prober dimension " + std::to_string(prober.dim()));
    std::array<double, kFolds> p{};
    double mean = 0.0;
    for (int f = 0; f < kFolds; ++f) {
        p[f] = prober.folds[f].probability(feature);
        mean += p[f];
    }
    mean /= kFolds;
    // shifted by the first member so that identical members give exactly zero
    double shift_mean = 0.0;
    for (double v : p) shift_mean += v - p[0];
    shift_mean /= kFolds;
    double var = 0.0;
    for (double v : p) var += (v - p[0] - shift_mean) * (v - p[0] - shift_mean);
    var /= kFolds;
    return {prober.concept_id, mean, var};
}

void ProberBundle::add(ConceptProber p) {
    if (probers_.empty() && dim_ == 0) dim_ = std::uint32_t(p.dim());
    if (p.dim() != dim_) throw ConfigError("all probers in a bundle must share a dimension");
    for (const auto& f : p.folds)
        if (f.weights.size() != dim_) throw ConfigError("fold weight length mismatch");
    if (find(p.concept_id))
        throw ConfigError("duplicate prober for concept " + std::to_string(p.concept_id));
    probers_.push_back(std::move(p));
}

const ConceptProber* ProberBundle::find(int concept_id) const {
    for (const auto& p : probers_)
        if (p.concept_id == concept_id) return &p;
    return nullptr;
}

std::vector<ProbeResult> probe_all(const ProberBundle& bundle, std::span<const float> feature) {
    if (bundle.empty()) throw MissingArtifact("no probers loaded");
    std::vector<ProbeResult> out;
    out.reserve(bundle.probers().size());
    for (const auto& p : bundle.probers()) out.push_back(probe(p, feature));
    std::sort(out.begin(), out.end(), [](const ProbeResult& a, const ProbeResult& b) {
        if (a.probability != b.probability) return a.probability > b.probability;
        return a.concept_id < b.concept_id;
    });
    return out;
}

void write_bundle(const std::filesystem::path& path, const ProberBundle& bundle) {
    io::BinaryWriter out(path);
    out.magic("PRBR");
    out.put<std::uint32_t>(std::uint32_t(bundle.probers().size()));
    out.put<std::uint32_t>(bundle.dim());
    for (const auto& p : bundle.probers()) {
        out.put<std::uint32_t>(std::uint32_t(p.concept_id));
        for (const auto& f : p.folds) {
            out.put_array<float>(f.weights);
            out.put<float>(f.bias);
            out.put<float>(f.platt_a);
            out.put<float>(f.platt_b);
        }
        out.put_array<float>(p.cav);
    }
    out.commit();
}

ProberBundle read_bundle(const std::filesystem::path& path) {
    io::BinaryReader in(path);
    in.expect_magic("PRBR");
    auto count = in.get<std::uint32_t>();
    auto dim = in.get<std::uint32_t>();
    ProberBundle bundle(dim);
    for (std::uint32_t c = 0; c < count; ++c) {
        ConceptProber p;
        p.concept_id = int(in.get<std::uint32_t>());
        for (auto& f : p.folds) {
            f.weights.resize(dim);
            in.get_array<float>(f.weights);
            f.bias = in.get<float>();
            f.platt_a = in.get<float>();
            f.platt_b = in.get<float>();
        }
        p.cav.resize(dim);
        in.get_array<float>(p.cav);
        bundle.add(std::move(p));
    }
    in.expect_end();
    return bundle;
}

double MlpProber::logit(std::span<const float> x) const {
    if (x.size() != dim) throw ConfigError("feature dimension mismatch for MLP prober");
    double out = b2;
    for (int j = 0; j < hidden; ++j) {
        double a = b1[j];
        const double* row = w1.data() + std::size_t(j) * dim;
        for (std::size_t i = 0; i < dim; ++i) a += row[i] * double(x[i]);
        if (a > 0.0) out += w2[j] * a;
    }
    return out;
}

double MlpProber::probability(std::span<const float> x) const {
    return sigmoid(logit(x) / temperature);
}

namespace {

struct Adam {
    std::vector<double> m, v;
    double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
    void step(std::vector<double>& param, const std::vector<double>& grad, double lr, int t) {
        double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < param.size(); ++i) {
            m[i] = b1 * m[i] + (1 - b1) * grad[i];
            v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i];
            param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

double temperature_nll(const std::vector<double>& logits, const std::vector<int>& y, double temp) {
    double f = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double z = logits[i] / temp;
        f += y[i] ? softplus(-z) : softplus(z);
    }
    return f;
}

}  // namespace

MlpProber train_mlp_baseline(int concept_id, const RowSet& positives, const RowSet& negatives,
                             std::size_t dim, const RowSet& val_positives,
                             const RowSet& val_negatives, const MlpConfig& cfg) {
    if (positives.empty() || negatives.empty())
        throw DataError("concept " + std::to_string(concept_id) +
                        ": training needs both classes to be non-empty");
    if (cfg.hidden <= 0 || cfg.batch_size <= 0) throw ConfigError("bad MLP configuration");
    MlpProber net;
    net.concept_id = concept_id;
    net.dim = dim;
    net.hidden = cfg.hidden;
    const auto h = std::size_t(cfg.hidden);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> n1(0.0, std::sqrt(2.0 / double(dim)));
    std::normal_distribution<double> n2(0.0, std::sqrt(1.0 / double(h)));
    net.w1.resize(h * dim);
    for (auto& v : net.w1) v = n1(rng);
    net.b1.assign(h, 0.0);
    net.w2.resize(h);
    for (auto& v : net.w2) v = n2(rng);

    struct Sample {
        std::span<const float> x;
        double y;
    };
    std::vector<Sample> data;
    for (auto r : positives) data.push_back({r, 1.0});
    for (auto r : negatives) data.push_back({r, 0.0});
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    Adam opt_w1(net.w1.size()), opt_b1(h), opt_w2(h), opt_b2(1);
    std::vector<double> g_w1(net.w1.size()), g_b1(h), g_w2(h), g_b2(1), act(h), b2v{0.0};
    int t = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_in_place(order, rng);
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
            std::fill(g_w1.begin(), g_w1.end(), 0.0);
            std::fill(g_b1.begin(), g_b1.end(), 0.0);
            std::fill(g_w2.begin(), g_w2.end(), 0.0);
            g_b2[0] = 0.0;
            const double scale = 1.0 / double(end - start);
            for (std::size_t bi = start; bi < end; ++bi) {
                const auto& s = data[order[bi]];
                double out = net.b2;
                for (std::size_t j = 0; j < h; ++j) {
                    double a = net.b1[j];
                    const double* row = net.w1.data() + j * dim;
                    for (std::size_t i = 0; i < dim; ++i) a += row[i] * double(s.x[i]);
                    act[j] = a;
                    if (a > 0.0) out += net.w2[j] * a;
                }
                double d = (sigmoid(out) - s.y) * scale;
                g_b2[0] += d;
                for (std::size_t j = 0; j < h; ++j) {
                    if (act[j] <= 0.0) continue;
                    g_w2[j] += d * act[j];
                    double dj = d * net.w2[j];
                    g_b1[j] += dj;
                    double* grow = g_w1.data() + j * dim;
                    for (std::size_t i = 0; i < dim; ++i) grow[i] += dj * double(s.x[i]);
                }
            }
            ++t;
            opt_w1.step(net.w1, g_w1, cfg.learning_rate, t);
            opt_b1.step(net.b1, g_b1, cfg.learning_rate, t);
            opt_w2.step(net.w2, g_w2, cfg.learning_rate, t);
            b2v[0] = net.b2;
            opt_b2.step(b2v, g_b2, cfg.learning_rate, t);
            net.b2 = b2v[0];
        }
    }

    std::vector<double> logits;
    std::vector<int> y;
    for (auto r : val_positives) {
        logits.push_back(net.logit(r));
        y.push_back(1);
    }
    for (auto r : val_negatives) {
        logits.push_back(net.logit(r));
        y.push_back(0);
    }
    if (!logits.empty()) {
        // golden-section search over log temperature
        double lo = std::log(0.05), hi = std::log(20.0);
        const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
        double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
        double f1 = temperature_nll(logits, y, std::exp(x1));
        double f2 = temperature_nll(logits, y, std::exp(x2));
        for (int it = 0; it < 100; ++it) {
            if (f1 < f2) {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = temperature_nll(logits, y, std::exp(x1));
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = temperature_nll(logits, y, std::exp(x2));
            }
        }
        net.temperature = std::exp(0.5 * (lo + hi));
    }
    return net;
}

}  // namespace rainex::prober
