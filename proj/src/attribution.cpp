#include "rainex/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rainex/csv.hpp"
#include "rainex/error.hpp"
#include "rainex/eval.hpp"
#include "rainex/parallel.hpp"

namespace rainex::attribution {

namespace {

struct WrapperName {
    WrapperKind kind;
    const char* name;
    const char* snake;
};
constexpr std::array<WrapperName, 5> kNames{{
    {WrapperKind::LogitSum, "LogitSum", "logit_sum"},
    {WrapperKind::MaskedSum, "MaskedSum", "masked_sum"},
    {WrapperKind::MaskedScaledSum, "MaskedScaledSum", "masked_scaled_sum"},
    {WrapperKind::MaskedPixelCount, "MaskedPixelCount", "masked_pixel_count"},
    {WrapperKind::Loss, "Loss", "loss"},
}};

void check_class(const model::Logits& logits, int k) {
    if (k < 0 || k >= logits.classes)
        throw ConfigError("class " + std::to_string(k) + " outside 0.." +
                          std::to_string(logits.classes - 1));
}

double norm(const model::FeatureMap& f) {
    double s = 0.0;
    for (double v : f.values) s += v * v;
    return std::sqrt(s);
}

model::FeatureMap axpy(const model::FeatureMap& base, double a, const model::FeatureMap& dir) {
    model::FeatureMap out = base;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += a * dir.values[i];
    return out;
}

void check_direction(const model::FeatureMap& base, const model::FeatureMap& direction) {
    if (!(base.shape == direction.shape) || base.values.size() != direction.values.size())
        throw ConfigError("direction shape does not match the bottleneck");
}

}  // namespace

std::string to_string(WrapperKind kind) {
    for (const auto& n : kNames)
        if (n.kind == kind) return n.name;
    return "unknown";
}

WrapperKind parse_wrapper(const std::string& text) {
    for (const auto& n : kNames)
        if (text == n.name || text == n.snake) return n.kind;
    throw ConfigError("unknown wrapper '" + text +
                      "' (expected LogitSum, MaskedSum, MaskedScaledSum, MaskedPixelCount or Loss)");
}

std::vector<std::uint8_t> class_mask(const model::Logits& logits, int k) {
    check_class(logits, k);
    auto classes = model::argmax_classes(logits);
    std::vector<std::uint8_t> mask(classes.classes.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = classes.classes[i] == k;
    return mask;
}

WrapperValue wrap(WrapperKind kind, const model::Logits& logits, int k,
                  const model::ClassMap* truth) {
    if (kind == WrapperKind::LogitSum || kind == WrapperKind::Loss)
        return wrap(kind, logits, k, std::span<const std::uint8_t>{}, truth);
    auto mask = class_mask(logits, k);
    return wrap(kind, logits, k, mask, truth);
}

WrapperValue wrap(WrapperKind kind, const model::Logits& logits, int k,
                  std::span<const std::uint8_t> mask, const model::ClassMap* truth) {
    for (double v : logits.values)
        if (!std::isfinite(v)) throw DataError("non-finite logit passed to wrapper");
    WrapperValue out;
    if (kind == WrapperKind::Loss) {
        if (!truth) throw ConfigError("Loss wrapper needs a truth map");
        out.value = 1.0 - eval::soft_modified_f1(logits, *truth);
        return out;
    }
    check_class(logits, k);
    const std::size_t plane = logits.plane();
    const double* lk = logits.values.data() + std::size_t(k) * plane;
    if (kind == WrapperKind::LogitSum) {
        for (std::size_t i = 0; i < plane; ++i) out.value += lk[i];
        return out;
    }
    if (mask.size() != plane) throw ConfigError("mask size does not match the logit plane");
    double sum = 0.0, soft = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < plane; ++i) {
        if (!mask[i]) continue;
        ++count;
        sum += lk[i];
        if (kind != WrapperKind::MaskedSum) {
            double mx = logits.values[i];
            for (int c = 1; c < logits.classes; ++c) mx = std::max(mx, logits.values[c * plane + i]);
            double z = 0.0;
            for (int c = 0; c < logits.classes; ++c) z += std::exp(logits.values[c * plane + i] - mx);
            soft += std::exp(lk[i] - mx) / z;
        }
    }
    if (count == 0) {
        out.empty_mask = true;
        return out;
    }
    switch (kind) {
        case WrapperKind::MaskedSum: out.value = sum; break;
        case WrapperKind::MaskedScaledSum: out.value = sum / soft; break;
        case WrapperKind::MaskedPixelCount: out.value = soft; break;
        default: break;
    }
    return out;
}

double sensitivity(const model::SegmentationModel& model, const model::FeatureMap& base,
                   const model::FeatureMap& direction, int k, WrapperKind wrapper,
                   double epsilon, const model::ClassMap* truth) {
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    check_direction(base, direction);
    if (std::abs(norm(direction) - 1.0) > 1e-6) throw ConfigError("direction must have unit norm");
    auto l0 = model.decode(base);
    auto l1 = model.decode(axpy(base, epsilon, direction));
    std::vector<std::uint8_t> mask;
    if (wrapper != WrapperKind::LogitSum && wrapper != WrapperKind::Loss) mask = class_mask(l0, k);
    double v0 = wrap(wrapper, l0, k, mask, truth).value;
    double v1 = wrap(wrapper, l1, k, mask, truth).value;
    double s = (v1 - v0) / epsilon;
    if (!std::isfinite(s)) throw DataError("non-finite sensitivity");
    return s;
}

double sensitivity(const model::SegmentationModel& model, const preprocess::ModelInput& input,
                   const model::FeatureMap& direction, int k, WrapperKind wrapper,
                   double epsilon, const model::ClassMap* truth) {
    return sensitivity(model, model.encode(input), direction, k, wrapper, epsilon, truth);
}

std::optional<double> analytic_sensitivity(const model::SegmentationModel& model,
                                           const model::FeatureMap& base,
                                           const model::FeatureMap& direction, int k,
                                           WrapperKind wrapper) {
    if (wrapper != WrapperKind::LogitSum && wrapper != WrapperKind::MaskedSum) return std::nullopt;
    check_direction(base, direction);
    auto lin = model.decode_linear(direction);
    if (!lin) return std::nullopt;
    check_class(*lin, k);
    std::vector<std::uint8_t> mask;
    if (wrapper == WrapperKind::MaskedSum) mask = class_mask(model.decode(base), k);
    const std::size_t plane = lin->plane();
    const double* lk = lin->values.data() + std::size_t(k) * plane;
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i)
        if (mask.empty() || mask[i]) s += lk[i];
    return s;
}

std::set<int> truth_classes(const model::ClassMap& truth) {
    return {truth.classes.begin(), truth.classes.end()};
}

ImportanceStat importance(const model::SegmentationModel& model, std::span<const Sample> samples,
                          const model::FeatureMap& direction, int k, WrapperKind wrapper,
                          double epsilon, unsigned threads) {
    double n = norm(direction);
    if (!(n > 0.0) || !std::isfinite(n)) throw ConfigError("direction must be non-zero");
    model::FeatureMap unit = direction;
    for (auto& v : unit.values) v /= n;

    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (wrapper == WrapperKind::Loss || truth_classes(samples[i].truth).count(k))
            members.push_back(i);
    ImportanceStat stat;
    stat.samples = members.size();
    if (members.empty()) return stat;
    std::vector<std::uint8_t> positive(members.size(), 0);
    parallel_each(members.size(), threads, [&](std::size_t j) {
        const auto& s = samples[members[j]];
        positive[j] = sensitivity(model, s.feature, unit, k, wrapper, epsilon, &s.truth) > 0.0;
    });
    for (auto p : positive) stat.positive += p;
    stat.score = double(stat.positive) / double(stat.samples);
    return stat;
}

Perturbation perturb_prediction(const model::SegmentationModel& model,
                                const model::FeatureMap& base, const model::FeatureMap& direction,
                                double alpha) {
    check_direction(base, direction);
    if (!std::isfinite(alpha)) throw ConfigError("alpha must be finite");
    Perturbation p;
    p.baseline = model::argmax_classes(model.decode(base));
    p.perturbed = alpha == 0.0 ? p.baseline : model::argmax_classes(model.decode(axpy(base, alpha, direction)));
    for (std::size_t i = 0; i < p.baseline.classes.size(); ++i)
        p.changed_pixels += p.baseline.classes[i] != p.perturbed.classes[i];
    return p;
}

ImportanceReport importance_report(const model::SegmentationModel& model,
                                   std::span<const Sample> samples,
                                   const prober::ProberBundle& probers,
                                   const std::vector<prober::Concept>& concepts,
                                   const features::ChannelPruneMap& prune,
                                   const ReportConfig& config) {
    if (!(config.epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (config.wrapper == WrapperKind::Loss)
        throw ConfigError("the Loss column is always included; choose a class wrapper");
    ImportanceReport r;
    r.wrapper = config.wrapper;
    r.epsilon = config.epsilon;
    r.classes = config.classes;
    r.has_loss = config.include_loss;
    for (int k : config.classes) {
        std::size_t n = 0;
        for (const auto& s : samples) n += truth_classes(s.truth).count(k);
        r.sample_counts.push_back(n);
    }
    r.loss_samples = config.include_loss ? samples.size() : 0;

    const auto shape = model.spec().bottleneck;
    for (const auto& c : concepts) {
        ImportanceReport::Row row;
        row.concept_id = c.id;
        row.concept_name = c.name;
        const auto* p = probers.find(c.id);
        if (!p) {
            row.skipped = true;
            row.scores.assign(config.classes.size(), std::nullopt);
            r.rows.push_back(std::move(row));
            continue;
        }
        auto dir = features::lift_direction(p->cav, shape, prune);
        for (int k : config.classes)
            row.scores.push_back(
                importance(model, samples, dir, k, config.wrapper, config.epsilon, config.threads).score);
        if (config.include_loss)
            row.loss_score =
                importance(model, samples, dir, 0, WrapperKind::Loss, config.epsilon, config.threads).score;
        r.rows.push_back(std::move(row));
    }
    return r;
}

namespace {

std::string score_text(const std::optional<double>& s) {
    if (!s) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *s);
    return buf;
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const ImportanceReport& report) {
    std::string text = "concept_id,concept_name,class_or_loss,score,n_samples\n";
    for (const auto& row : report.rows) {
        for (std::size_t j = 0; j < report.classes.size(); ++j)
            text += std::to_string(row.concept_id) + "," + csv::escape(row.concept_name) + "," +
                    std::to_string(report.classes[j]) + "," + score_text(row.scores[j]) + "," +
                    std::to_string(report.sample_counts[j]) + "\n";
        if (report.has_loss)
            text += std::to_string(row.concept_id) + "," + csv::escape(row.concept_name) + ",loss," +
                    score_text(row.loss_score) + "," + std::to_string(report.loss_samples) + "\n";
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write " + path.string());
        out << text;
    }
    std::filesystem::rename(tmp, path);
}

nlohmann::json to_json(const ImportanceReport& r) {
    using nlohmann::json;
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json j;
    j["wrapper"] = to_string(r.wrapper);
    j["epsilon"] = r.epsilon;
    j["classes"] = r.classes;
    j["sample_counts"] = r.sample_counts;
    j["has_loss"] = r.has_loss;
    j["loss_samples"] = r.loss_samples;
    j["concepts"] = json::array();
    for (const auto& row : r.rows) {
        json scores = json::array();
        for (const auto& s : row.scores) scores.push_back(opt(s));
        j["concepts"].push_back({{"concept_id", row.concept_id},
                                 {"concept_name", row.concept_name},
                                 {"skipped", row.skipped},
                                 {"scores", scores},
                                 {"loss", opt(row.loss_score)}});
    }
    return j;
}

ImportanceReport report_from_json(const nlohmann::json& j) {
    try {
        ImportanceReport r;
        r.wrapper = parse_wrapper(j.at("wrapper").get<std::string>());
        r.epsilon = j.at("epsilon").get<double>();
        r.classes = j.at("classes").get<std::vector<int>>();
        r.sample_counts = j.at("sample_counts").get<std::vector<std::size_t>>();
        r.has_loss = j.at("has_loss").get<bool>();
        r.loss_samples = j.at("loss_samples").get<std::size_t>();
        auto opt = [](const nlohmann::json& v) {
            return v.is_null() ? std::optional<double>{} : std::optional<double>{v.get<double>()};
        };
        for (const auto& c : j.at("concepts")) {
            ImportanceReport::Row row;
            row.concept_id = c.at("concept_id").get<int>();
            row.concept_name = c.at("concept_name").get<std::string>();
            row.skipped = c.at("skipped").get<bool>();
            for (const auto& s : c.at("scores")) row.scores.push_back(opt(s));
            row.loss_score = opt(c.at("loss"));
            if (row.scores.size() != r.classes.size())
                throw FormatError("importance report row has the wrong number of scores");
            r.rows.push_back(std::move(row));
        }
        if (r.sample_counts.size() != r.classes.size())
            throw FormatError("importance report sample counts do not match the classes");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed importance report: ") + e.what());
    }
}

}  // namespace rainex::attribution
