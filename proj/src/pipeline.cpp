#include "rainex/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "rainex/error.hpp"
#include "rainex/eval.hpp"
#include "rainex/parallel.hpp"
#include "rainex/rdr.hpp"

namespace rainex::pipeline {

namespace fs = std::filesystem;

std::string frame_file_name(Timestamp t) {
    auto c = to_civil(t);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d%02u%02uT%02u%02u.hsr", c.year, c.month, c.day, c.hour,
                  c.minute);
    return buf;
}

namespace {

std::optional<Timestamp> parse_frame_name(const std::string& name) {
    int y;
    unsigned mo, d, h, mi;
    char tail[8] = {};
    if (name.size() != 17 ||
        std::sscanf(name.c_str(), "%4d%2u%2uT%2u%2u.%3s", &y, &mo, &d, &h, &mi, tail) != 6 ||
        std::string(tail) != "hsr")
        return std::nullopt;
    return from_civil({y, mo, d, h, mi, 0});
}

void require(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw MissingArtifact(what + " not found: " + p.string());
}

}  // namespace

RadarArchive::RadarArchive(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::is_directory(dir_)) throw MissingArtifact("radar directory not found: " + dir_.string());
    for (const auto& e : fs::directory_iterator(dir_))
        if (auto t = parse_frame_name(e.path().filename().string())) times_.push_back(*t);
    std::sort(times_.begin(), times_.end());
}

bool RadarArchive::has(Timestamp t) const {
    return std::binary_search(times_.begin(), times_.end(), t);
}

preprocess::RadarFrame RadarArchive::frame(Timestamp t) const {
    if (!has(t)) throw NotFound("no radar frame at " + format_iso8601(t));
    auto raw = preprocess::read_hsr(dir_ / frame_file_name(t));
    return preprocess::downsample(preprocess::dbz_to_rainrate(raw), kDownsample);
}

std::vector<Timestamp> RadarArchive::reference_times() const {
    std::vector<Timestamp> out;
    for (auto t : times_) {
        bool ok = true;
        for (int i = 1; i < preprocess::kLaggedFrames && ok; ++i) ok = has(t - i * kFrameStep);
        if (ok) out.push_back(t);
    }
    return out;
}

preprocess::ModelInput RadarArchive::input(Timestamp t) const {
    if (!has(t)) throw NotFound("no radar frame at " + format_iso8601(t));
    std::vector<preprocess::RadarFrame> frames;
    for (int i = preprocess::kLaggedFrames - 1; i >= 0; --i) {
        Timestamp want = t - i * kFrameStep;
        if (has(want)) frames.push_back(frame(want));
    }
    return preprocess::assemble_input(frames, t);
}

preprocess::SegmentMask RadarArchive::segments(Timestamp t) const {
    return preprocess::watershed_segments(frame(t));
}

model::ToyModel load_model(const PipelineConfig& config, const RadarArchive& archive) {
    require(config.weights_file(), "model weights");
    if (archive.times().empty()) throw MissingArtifact("radar archive is empty");
    auto f = archive.frame(archive.times().front());
    return model::ToyModel(model::read_weights(config.weights_file()), f.height, f.width);
}

GenDataSummary gen_data(const PipelineConfig& config, synth::SceneConfig scene) {
    scene.seed = config.seed;
    if (scene.height % (4 * kDownsample) || scene.width % (4 * kDownsample))
        throw ConfigError("scene size must be a multiple of 8");
    const auto radar = config.radar_dir();
    fs::create_directories(radar);
    for (const auto& e : fs::directory_iterator(radar))
        if (e.path().extension() == ".hsr") fs::remove(e.path());

    auto episodes = synth::plan_episodes(scene);
    prober::ConceptLabelSet labels;
    labels.concepts = synth::storm_concepts();
    GenDataSummary s;
    s.episodes = episodes.size();
    for (const auto& ep : episodes) {
        for (int f = 0; f < scene.frames_per_episode; ++f) {
            std::vector<std::vector<double>> contrib;
            auto frame = synth::render_frame(ep, f, scene, &contrib);
            auto raw = synth::to_raw(frame);
            preprocess::write_hsr(radar / frame_file_name(frame.timestamp), raw);
            ++s.frames;
            if (f < preprocess::kLaggedFrames - 1) continue;
            auto model_frame = preprocess::downsample(preprocess::dbz_to_rainrate(raw), kDownsample);
            auto mask = preprocess::watershed_segments(model_frame);
            for (auto& [id, concepts] :
                 synth::label_segments(mask, contrib, ep, scene.label_share, kDownsample)) {
                if (concepts.empty()) continue;
                labels.assignments[{frame.timestamp, id}] = std::move(concepts);
                ++s.labelled_segments;
            }
        }
    }
    model::ToyWeightConfig wc;
    wc.seed = config.seed;
    model::write_weights(config.weights_file(), model::generate_toy_weights(wc));
    prober::write_labels(config.labels_file(), config.concepts_file(), labels);
    return s;
}

ExtractSummary extract(const PipelineConfig& config) {
    RadarArchive archive(config.radar_dir());
    auto model = load_model(config, archive);
    auto refs = archive.reference_times();
    if (refs.empty()) throw DataError("no frame has a full hour of history");

    std::vector<model::FeatureMap> maps(refs.size());
    std::vector<preprocess::SegmentMask> masks(refs.size());
    parallel_each(refs.size(), config.worker_threads(), [&](std::size_t i) {
        maps[i] = model.encode(archive.input(refs[i]));
        masks[i] = archive.segments(refs[i]);
    });
    features::PruneAccumulator acc;
    for (const auto& m : maps) acc.add(m);
    auto prune = acc.finish();

    features::FeatureStore store(std::uint32_t(prune.active.size() * features::kSegmentCells));
    for (std::size_t i = 0; i < refs.size(); ++i)
        for (const auto& seg : masks[i].segments)
            store.add(features::extract_segment_feature(maps[i], masks[i], seg.id, prune));

    fs::create_directories(config.work_dir);
    features::write_prune_map(config.prune_file(), prune);
    features::write_feature_store(config.features_file(), store);
    return {refs.size(), store.size(), prune.active.size(), store.dim()};
}

namespace {

prober::DatasetConfig dataset_config(const PipelineConfig& c) {
    prober::DatasetConfig d;
    d.min_samples = c.min_samples;
    d.seed = c.seed;
    return d;
}

}  // namespace

TrainSummary train_probers(const PipelineConfig& config) {
    auto labels = prober::read_labels(config.labels_file(), config.concepts_file());
    auto store = features::read_feature_store(config.features_file());
    const auto& concepts = labels.concepts;

    std::vector<std::optional<prober::TrainedProber>> trained(concepts.size());
    std::vector<std::optional<prober::SkipConcept>> skipped(concepts.size());
    std::vector<ConceptTrainStats> stats(concepts.size());
    parallel_each(concepts.size(), config.worker_threads(), [&](std::size_t i) {
        const int id = concepts[i].id;
        prober::BinaryDataset ds;
        try {
            ds = prober::build_binary_dataset(labels, id, store, dataset_config(config));
        } catch (const prober::SkipConcept& s) {
            skipped[i] = s;
            return;
        }
        prober::SgdConfig sgd;
        sgd.l1 = config.l1;
        sgd.seed = config.seed;
        auto pos = prober::gather_rows(store, ds.train_pos);
        auto neg = prober::gather_rows(store, ds.train_neg);
        trained[i] = prober::train_prober(id, pos, neg, store.dim(), sgd);

        std::vector<int> pred, truth;
        for (auto r : ds.val_pos) {
            pred.push_back(prober::probe(trained[i]->prober, store.row(r)).probability >= 0.5);
            truth.push_back(1);
        }
        for (auto r : ds.val_neg) {
            pred.push_back(prober::probe(trained[i]->prober, store.row(r)).probability >= 0.5);
            truth.push_back(0);
        }
        auto& st = stats[i];
        st.concept_id = id;
        st.train_rows = pos.size() + neg.size();
        st.validation_rows = truth.size();
        st.validation_accuracy = eval::accuracy(pred, truth);
        st.validation_macro_f1 = truth.empty() ? 0.0 : eval::macro_f1(pred, truth, 2);
        st.converged = trained[i]->converged;
    });

    prober::ProberBundle bundle(store.dim());
    TrainSummary summary;
    for (std::size_t i = 0; i < concepts.size(); ++i) {
        if (trained[i]) {
            bundle.add(trained[i]->prober);
            summary.trained.push_back(stats[i]);
        } else {
            summary.skipped.push_back(*skipped[i]);
        }
    }
    fs::create_directories(config.work_dir);
    prober::write_bundle(config.probers_file(), bundle);
    return summary;
}

PcSummary build_pc(const PipelineConfig& config) {
    auto labels = prober::read_labels(config.labels_file(), config.concepts_file());
    auto store = features::read_feature_store(config.features_file());
    auto bundle = prober::read_bundle(config.probers_file());
    auto report = rdr::build_map(labels, store, bundle, config.d, dataset_config(config));
    rdr::write_pc_map(config.pc_map_file(), report.map);
    PcSummary s;
    s.concepts = report.map.per_concept.size();
    s.d = report.map.d;
    s.clamped = config.d > store.dim();
    s.skipped = std::move(report.skipped);
    return s;
}

IndexSummary build_index(const PipelineConfig& config) {
    require(config.pc_map_file(), "PC map");
    require(config.probers_file(), "prober bundle");
    auto store = features::read_feature_store(config.features_file());
    // validates that the three artifacts agree before writing
    nn::SearchIndex::build(store, rdr::read_pc_map(config.pc_map_file()),
                           std::make_shared<const prober::ProberBundle>(
                               prober::read_bundle(config.probers_file())));
    nn::write_index(config.index_file(), store, config.pc_map_file().filename().string(),
                    config.probers_file().filename().string());
    return {store.size(), store.dim()};
}

Workspace::Workspace(PipelineConfig config) : config_(std::move(config)) {
    archive_ = std::make_unique<RadarArchive>(config_.radar_dir());
    model_ = std::make_unique<model::ToyModel>(load_model(config_, *archive_));
    labels_ = std::make_unique<prober::ConceptLabelSet>(
        prober::read_labels(config_.labels_file(), config_.concepts_file()));
    if (fs::exists(config_.prune_file()))
        prune_ = std::make_unique<features::ChannelPruneMap>(features::read_prune_map(config_.prune_file()));
    if (fs::exists(config_.index_file())) {
        index_ = std::make_unique<nn::SearchIndex>(nn::load_index(config_.index_file()));
        index_->set_threads(config_.worker_threads());
        probers_ = index_->prober_handle();
    } else if (fs::exists(config_.probers_file())) {
        probers_ = std::make_shared<const prober::ProberBundle>(prober::read_bundle(config_.probers_file()));
    }
}

const RadarArchive& Workspace::archive() const { return *archive_; }
const model::ToyModel& Workspace::model() const { return *model_; }
const prober::ConceptLabelSet& Workspace::labels() const { return *labels_; }

const features::ChannelPruneMap& Workspace::prune() const {
    if (!prune_) throw MissingArtifact("prune map not found: " + config_.prune_file().string());
    return *prune_;
}

const nn::SearchIndex& Workspace::index() const {
    if (!index_) throw MissingArtifact("index not built: " + config_.index_file().string());
    return *index_;
}

const prober::ProberBundle& Workspace::probers() const {
    if (!probers_) throw MissingArtifact("prober bundle not found: " + config_.probers_file().string());
    return *probers_;
}

features::SegmentFeature Workspace::segment_feature(Timestamp t, std::int32_t segment_id) const {
    if (!archive_->has(t)) throw NotFound("no radar frame at " + format_iso8601(t));
    if (index_) {
        auto row = index_->find({t, segment_id});
        if (row >= 0) return {index_->row(std::size_t(row)), index_->meta(std::size_t(row))};
    }
    auto mask = archive_->segments(t);
    if (!mask.find(segment_id))
        throw NotFound("no segment " + std::to_string(segment_id) + " at " + format_iso8601(t));
    auto feature = model_->encode(archive_->input(t));
    return features::extract_segment_feature(feature, mask, segment_id, prune());
}

nn::NeighborResult Workspace::query(Timestamp t, std::int32_t segment_id, std::size_t k1,
                                    std::size_t k2, double min_gap_days) const {
    const auto& idx = index();
    if (!(min_gap_days >= 0)) throw ConfigError("min_gap_days must be >= 0");
    auto f = segment_feature(t, segment_id);
    nn::SearchOptions opt;
    opt.k1 = k1;
    opt.k2 = k2;
    auto gap = Timestamp(std::llround(min_gap_days * double(kDay)));
    return nn::search_filtered(idx, f.values, t, gap, opt, f.meta);
}

std::vector<attribution::Perturbation> Workspace::perturb(Timestamp t, std::int32_t segment_id,
                                                          int concept_id,
                                                          const std::vector<double>& alphas) const {
    const auto* p = probers().find(concept_id);
    if (!p) throw NotFound("no prober for concept " + std::to_string(concept_id));
    if (!archive_->has(t)) throw NotFound("no radar frame at " + format_iso8601(t));
    auto mask = archive_->segments(t);
    if (!mask.find(segment_id))
        throw NotFound("no segment " + std::to_string(segment_id) + " at " + format_iso8601(t));
    auto base = model_->encode(archive_->input(t));
    auto dir = features::lift_direction(p->cav, model_->spec().bottleneck, prune(), &mask, segment_id);
    std::vector<attribution::Perturbation> out;
    for (double a : alphas) out.push_back(attribution::perturb_prediction(*model_, base, dir, a));
    return out;
}

std::vector<attribution::Sample> Workspace::importance_samples() const {
    std::vector<Timestamp> refs;
    for (auto t : archive_->reference_times())
        if (archive_->has(t + kTruthLead)) refs.push_back(t);
    std::vector<attribution::Sample> out(refs.size());
    parallel_each(refs.size(), config_.worker_threads(), [&](std::size_t i) {
        auto truth = archive_->frame(refs[i] + kTruthLead);
        out[i].feature = model_->encode(archive_->input(refs[i]));
        out[i].truth = model::classify_rain(truth.rain, truth.height, truth.width);
    });
    return out;
}

attribution::ImportanceReport Workspace::importance(attribution::WrapperKind wrapper) const {
    auto samples = importance_samples();
    if (samples.empty()) throw DataError("no reference frame has a ground-truth frame one hour later");
    attribution::ReportConfig rc;
    rc.wrapper = wrapper;
    rc.epsilon = config_.epsilon;
    rc.threads = config_.worker_threads();
    return attribution::importance_report(*model_, samples, probers(), labels_->concepts, prune(), rc);
}

fs::path Workspace::report_path(attribution::WrapperKind wrapper, const std::string& ext) const {
    return config_.reports_dir() / ("importance_" + attribution::to_string(wrapper) + ext);
}

nlohmann::json to_json(const features::SegmentMeta& m) {
    return {{"time", format_iso8601(m.key.timestamp)},
            {"segment_id", m.key.segment_id},
            {"bbox", {m.bbox.row0, m.bbox.col0, m.bbox.row1, m.bbox.col1}},
            {"pixels", m.pixels}};
}

namespace {

nlohmann::json concept_rows(const std::vector<prober::ProbeResult>& rows,
                            const prober::ConceptLabelSet& labels) {
    auto out = nlohmann::json::array();
    for (const auto& r : rows) {
        const auto* c = labels.find(r.concept_id);
        out.push_back({{"concept_id", r.concept_id},
                       {"name", c ? c->name : ""},
                       {"probability", r.probability},
                       {"uncertainty", r.uncertainty}});
    }
    return out;
}

}  // namespace

nlohmann::json to_json(const nn::NeighborResult& r, const prober::ConceptLabelSet& labels) {
    nlohmann::json j;
    j["query"] = to_json(r.query_meta);
    j["query_concepts"] = concept_rows(r.query_concepts, labels);
    j["concepts_used"] = r.concepts_used;
    j["coordinates_used"] = r.coordinates_used;
    j["k2_clamped"] = r.k2_clamped;
    j["filter_exhausted"] = r.filter_exhausted;
    j["neighbors"] = nlohmann::json::array();
    for (const auto& nb : r.neighbors) {
        auto n = to_json(nb.meta);
        n["row"] = nb.row;
        n["distance"] = nb.distance;
        n["concepts"] = concept_rows(nb.concepts, labels);
        j["neighbors"].push_back(std::move(n));
    }
    return j;
}

nlohmann::json to_json(const model::ClassMap& m) {
    return {{"height", m.height},
            {"width", m.width},
            {"encoding", "base64-u8"},
            {"data", base64_encode(m.classes)}};
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t v = std::uint32_t(bytes[i]) << 16;
        if (i + 1 < bytes.size()) v |= std::uint32_t(bytes[i + 1]) << 8;
        if (i + 2 < bytes.size()) v |= bytes[i + 2];
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? kB64[v & 63] : '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    auto value = [](char c) -> int {
        const char* p = std::strchr(kB64, c);
        return c && p ? int(p - kB64) : -1;
    };
    if (text.size() % 4) throw FormatError("base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::uint32_t v = 0;
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            char c = text[i + j];
            int x = 0;
            if (c == '=' && i + 4 == text.size() && j >= 2) {
                ++pad;
            } else {
                if (pad || (x = value(c)) < 0) throw FormatError("invalid base64 character");
            }
            v = (v << 6) | std::uint32_t(x);
        }
        out.push_back(std::uint8_t(v >> 16));
        if (pad < 2) out.push_back(std::uint8_t(v >> 8));
        if (pad < 1) out.push_back(std::uint8_t(v));
    }
    return out;
}

const std::array<const char*, model::kNumClasses>& class_palette() {
    static const std::array<const char*, model::kNumClasses> p{
        "#ffffff", "#a6d8f0", "#4aa3df", "#1f5fbf", "#2ca02c", "#f2d024", "#f07f1a", "#d62020"};
    return p;
}

void write_class_ppm(const fs::path& path, const model::ClassMap& m) {
    std::string data = "P6\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
    for (auto c : m.classes) {
        unsigned rgb = std::stoul(class_palette().at(c) + 1, nullptr, 16);
        data += char((rgb >> 16) & 255);
        data += char((rgb >> 8) & 255);
        data += char(rgb & 255);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << data;
}

}  // namespace rainex::pipeline
