#include "rainex/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rainex/attribution.hpp"
#include "rainex/config.hpp"
#include "rainex/error.hpp"
#include "rainex/eval.hpp"
#include "rainex/pipeline.hpp"
#include "rainex/service.hpp"

namespace rainex::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    std::string config_file;
    std::string data_dir, work_dir;
    std::uint64_t seed = 42;
    unsigned threads = 0;
    bool json_output = false;

    // gen-data
    int episodes = 48, frames_per_episode = 19, size = 64;
    // train-probers / build-pc
    double l1 = 1e-4;
    std::size_t min_samples = 20, d = 300;
    // query / perturb
    std::string time;
    std::int32_t segment = 0;
    std::size_t k1 = 3, k2 = 3;
    double min_gap_days = 30;
    int concept_id = 0;
    std::vector<double> alphas{1.0};
    std::string out_dir;
    // importance
    std::string wrapper = "LogitSum";
    double epsilon = 1e-3;
    // bench
    std::size_t bench_rows = 4000, bench_queries = 30, prober_rows = 300;
    std::uint32_t bench_dim = 2000, support = 150;
    int bench_concepts = 10;
    std::vector<std::string> methods{"full", "pca", "pcnse"};
    std::vector<std::size_t> dims{15, 100, 300, 1000};
    std::string out;
    // serve
    std::string host;
    int port = 8080;
};

struct App {
    CLI::App app{"rainex: concept probing and example-based explanation for rain nowcasting", "rainex"};
    Options o;
    std::map<std::string, CLI::App*> subs;
    std::map<std::string, CLI::Option*> settable;  // options that map onto config keys
};

void add_global(App& a) {
    auto& app = a.app;
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--config", a.o.config_file, "key = value config file")->check(CLI::ExistingFile);
    a.settable["data_dir"] = app.add_option("--data-dir", a.o.data_dir, "input data directory (default data)");
    a.settable["work_dir"] = app.add_option("--work-dir", a.o.work_dir, "artifact directory (default work)");
    a.settable["seed"] = app.add_option("--seed", a.o.seed, "random seed (default 42)");
    a.settable["threads"] = app.add_option("--threads", a.o.threads, "worker threads, 0 = logical cores");
    app.add_flag("--json", a.o.json_output, "print machine-readable JSON");
}

void build(App& a) {
    add_global(a);
    auto& o = a.o;
    auto sub = [&](const std::string& name, const std::string& help) {
        auto* s = a.app.add_subcommand(name, help);
        a.subs[name] = s;
        return s;
    };
    auto* gen = sub("gen-data", "generate synthetic radar frames, model weights and concept labels");
    gen->add_option("--episodes", o.episodes, "storm episodes spread over one year")->check(CLI::PositiveNumber);
    gen->add_option("--frames-per-episode", o.frames_per_episode, "10-minute frames per episode")
        ->check(CLI::Range(7, 144));
    gen->add_option("--size", o.size, "raw grid side in pixels (multiple of 8)")->check(CLI::PositiveNumber);

    sub("extract", "encode reference frames, prune dead channels and store segment features");

    auto* train = sub("train-probers", "train calibrated five-fold concept probers");
    a.settable["l1"] = train->add_option("--l1", o.l1, "L1 penalty");
    a.settable["min_samples"] = train->add_option("--min-samples", o.min_samples, "minimum positives per concept");

    auto* pc = sub("build-pc", "select principal neuron components per concept");
    a.settable["d"] = pc->add_option("--d", o.d, "components per concept");
    pc->add_option("--min-samples", o.min_samples, "minimum positives per concept");

    sub("index", "write the search index");

    auto* q = sub("query", "find conceptually similar segments");
    q->add_option("--time", o.time, "frame time, ISO-8601")->required();
    q->add_option("--segment", o.segment, "segment id in that frame")->required();
    a.settable["k1"] = q->add_option("--k1", o.k1, "concepts gating the subspace");
    a.settable["k2"] = q->add_option("--k2", o.k2, "neighbours to return");
    a.settable["min_gap_days"] = q->add_option("--min-gap-days", o.min_gap_days, "minimum time gap to the query");

    auto* imp = sub("importance", "concept importance per rain class, plus the loss column");
    imp->add_option("--wrapper", o.wrapper, "LogitSum, MaskedSum, MaskedScaledSum, MaskedPixelCount or all");
    a.settable["epsilon"] = imp->add_option("--epsilon", o.epsilon, "finite-difference step");

    auto* per = sub("perturb", "render predictions with the feature map shifted along a CAV");
    per->add_option("--time", o.time, "frame time, ISO-8601")->required();
    per->add_option("--segment", o.segment, "segment id in that frame")->required();
    per->add_option("--concept", o.concept_id, "concept id")->required();
    per->add_option("--alpha", o.alphas, "perturbation magnitudes (repeatable)")->expected(1, -1);
    per->add_option("--out-dir", o.out_dir, "write PPM images of each class map here");

    auto* bench = sub("bench", "runtime and precision@k on a planted-cluster corpus");
    bench->add_option("--rows", o.bench_rows, "indexed rows")->check(CLI::PositiveNumber);
    bench->add_option("--dim", o.bench_dim, "feature dimension")->check(CLI::PositiveNumber);
    bench->add_option("--queries", o.bench_queries, "held-out queries (>= 20)");
    bench->add_option("--concepts", o.bench_concepts, "planted concepts")->check(CLI::PositiveNumber);
    bench->add_option("--support", o.support, "coordinates owned by each concept");
    bench->add_option("--methods", o.methods, "full, pca, pcnse")->delimiter(',');
    bench->add_option("--dims", o.dims, "d values")->delimiter(',');
    bench->add_option("--k1", o.k1, "concepts gating the subspace");
    bench->add_option("--prober-rows", o.prober_rows, "positives per concept used for fitting");
    bench->add_option("--out", o.out, "write <out>.md and <out>.json");

    auto* serve = sub("serve", "serve the /api/v1 HTTP interface");
    a.settable["host"] = serve->add_option("--host", o.host, "bind address");
    a.settable["port"] = serve->add_option("--port", o.port, "TCP port");
}

config::Settings flag_settings(App& a) {
    config::Settings s;
    for (const auto& [key, opt] : a.settable) {
        if (!opt || opt->count() == 0) continue;
        s[key] = opt->as<std::string>();
    }
    // options that exist on several subcommands
    if (auto* o = a.subs["build-pc"]->get_option("--min-samples"); o->count())
        s["min_samples"] = o->as<std::string>();
    if (auto* o = a.subs["bench"]->get_option("--k1"); o->count()) s["k1"] = o->as<std::string>();
    return s;
}

void print(std::ostream& out, bool as_json, const json& j, const std::string& human) {
    if (as_json)
        out << j.dump(2) << "\n";
    else
        out << human;
}

json skipped_json(const std::vector<prober::SkipConcept>& s) {
    json a = json::array();
    for (const auto& k : s) a.push_back({{"concept_id", k.concept_id()}, {"positives", k.positives()}});
    return a;
}

std::string format_concepts(const std::vector<prober::ProbeResult>& rows,
                            const prober::ConceptLabelSet& labels) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    for (const auto& r : rows) {
        const auto* c = labels.find(r.concept_id);
        os << "      " << std::setw(3) << r.concept_id << "  " << std::left << std::setw(20)
           << (c ? c->name : "?") << std::right << " " << r.probability << " (" << r.uncertainty
           << ")\n";
    }
    return os.str();
}

int dispatch(App& a, const std::string& name, std::ostream& out) {
    const auto& o = a.o;
    std::optional<fs::path> file;
    if (!o.config_file.empty()) file = o.config_file;
    auto cfg = config::resolve(file, flag_settings(a));

    if (name == "gen-data") {
        synth::SceneConfig scene;
        scene.episodes = o.episodes;
        scene.frames_per_episode = o.frames_per_episode;
        scene.height = scene.width = o.size;
        auto s = pipeline::gen_data(cfg, scene);
        json j{{"frames", s.frames}, {"episodes", s.episodes}, {"labelled_segments", s.labelled_segments},
               {"data_dir", cfg.data_dir.string()}};
        print(out, o.json_output, j,
              "wrote " + std::to_string(s.frames) + " frames in " + std::to_string(s.episodes) +
                  " episodes, " + std::to_string(s.labelled_segments) + " labelled segments to " +
                  cfg.data_dir.string() + "\n");
    } else if (name == "extract") {
        auto s = pipeline::extract(cfg);
        json j{{"references", s.references}, {"segments", s.segments},
               {"active_channels", s.active_channels}, {"dim", s.dim}};
        print(out, o.json_output, j,
              "extracted " + std::to_string(s.segments) + " segments from " +
                  std::to_string(s.references) + " frames; " + std::to_string(s.active_channels) +
                  " active channels, dim " + std::to_string(s.dim) + "\n");
    } else if (name == "train-probers") {
        auto s = pipeline::train_probers(cfg);
        json trained = json::array();
        std::ostringstream h;
        h << std::fixed << std::setprecision(3);
        for (const auto& t : s.trained) {
            trained.push_back({{"concept_id", t.concept_id}, {"train_rows", t.train_rows},
                               {"validation_rows", t.validation_rows},
                               {"validation_accuracy", t.validation_accuracy},
                               {"validation_macro_f1", t.validation_macro_f1},
                               {"converged", t.converged}});
            h << "concept " << t.concept_id << ": " << t.train_rows << " train rows, validation macro-F1 "
              << t.validation_macro_f1 << (t.converged ? "" : " (not converged)") << "\n";
        }
        for (const auto& k : s.skipped) h << "skipped: " << k.what() << "\n";
        print(out, o.json_output, {{"trained", trained}, {"skipped", skipped_json(s.skipped)}}, h.str());
    } else if (name == "build-pc") {
        auto s = pipeline::build_pc(cfg);
        json j{{"concepts", s.concepts}, {"d", s.d}, {"clamped", s.clamped},
               {"skipped", skipped_json(s.skipped)}};
        print(out, o.json_output, j,
              "PC map: " + std::to_string(s.concepts) + " concepts, d=" + std::to_string(s.d) +
                  (s.clamped ? " (clamped to the feature dimension)" : "") + "\n");
    } else if (name == "index") {
        auto s = pipeline::build_index(cfg);
        print(out, o.json_output, {{"rows", s.rows}, {"dim", s.dim}, {"path", cfg.index_file().string()}},
              "indexed " + std::to_string(s.rows) + " segments of dim " + std::to_string(s.dim) + "\n");
    } else if (name == "query") {
        pipeline::Workspace ws(cfg);
        auto res = ws.query(parse_iso8601(o.time), o.segment, cfg.k1, cfg.k2, cfg.min_gap_days);
        std::ostringstream h;
        h << "query " << format_iso8601(res.query_meta.key.timestamp) << " segment "
          << res.query_meta.key.segment_id << "\n"
          << format_concepts(res.query_concepts, ws.labels());
        if (res.filter_exhausted) h << "no neighbour outside the time gap\n";
        for (const auto& nb : res.neighbors)
            h << "  " << format_iso8601(nb.meta.key.timestamp) << " segment " << nb.meta.key.segment_id
              << "  distance " << nb.distance << "\n"
              << format_concepts(nb.concepts, ws.labels());
        print(out, o.json_output, pipeline::to_json(res, ws.labels()), h.str());
    } else if (name == "importance") {
        pipeline::Workspace ws(cfg);
        std::vector<attribution::WrapperKind> kinds;
        if (o.wrapper == "all") {
            for (auto k : attribution::kWrappers)
                if (k != attribution::WrapperKind::Loss) kinds.push_back(k);
        } else {
            kinds.push_back(attribution::parse_wrapper(o.wrapper));
        }
        fs::create_directories(cfg.reports_dir());
        json all = json::array();
        std::ostringstream h;
        for (auto k : kinds) {
            auto report = ws.importance(k);
            auto j = attribution::to_json(report);
            attribution::write_report_csv(ws.report_path(k, ".csv"), report);
            std::ofstream(ws.report_path(k, ".json")) << j.dump(2) << "\n";
            all.push_back(j);
            h << attribution::to_string(k) << ": wrote " << ws.report_path(k, ".csv").string() << "\n";
            h << std::fixed << std::setprecision(3);
            for (const auto& row : report.rows) {
                h << "  " << std::setw(3) << row.concept_id << " " << std::left << std::setw(18)
                  << row.concept_name << std::right;
                for (const auto& s : row.scores) {
                    if (s)
                        h << " " << *s;
                    else
                        h << "     -";
                }
                h << "  loss " << (row.loss_score ? std::to_string(*row.loss_score) : "-") << "\n";
            }
        }
        print(out, o.json_output, kinds.size() == 1 ? all[0] : all, h.str());
    } else if (name == "perturb") {
        pipeline::Workspace ws(cfg);
        auto t = parse_iso8601(o.time);
        auto results = ws.perturb(t, o.segment, o.concept_id, o.alphas);
        json j{{"time", format_iso8601(t)}, {"segment_id", o.segment}, {"concept_id", o.concept_id},
               {"baseline", pipeline::to_json(results.front().baseline)}, {"results", json::array()}};
        std::ostringstream h;
        if (!o.out_dir.empty()) {
            fs::create_directories(o.out_dir);
            pipeline::write_class_ppm(fs::path(o.out_dir) / "baseline.ppm", results.front().baseline);
        }
        for (std::size_t i = 0; i < results.size(); ++i) {
            j["results"].push_back({{"alpha", o.alphas[i]},
                                    {"perturbed", pipeline::to_json(results[i].perturbed)},
                                    {"changed_pixels", results[i].changed_pixels}});
            h << "alpha " << o.alphas[i] << ": " << results[i].changed_pixels << " pixels changed class\n";
            if (!o.out_dir.empty()) {
                std::ostringstream fn;
                fn << "perturbed_" << i << ".ppm";
                pipeline::write_class_ppm(fs::path(o.out_dir) / fn.str(), results[i].perturbed);
            }
        }
        print(out, o.json_output, j, h.str());
    } else if (name == "bench") {
        eval::PlantedConfig pc;
        pc.rows = o.bench_rows;
        pc.dim = o.bench_dim;
        pc.queries = o.bench_queries;
        pc.concepts = o.bench_concepts;
        pc.support = o.support;
        pc.seed = cfg.seed;
        eval::BenchConfig bc;
        bc.methods = o.methods;
        bc.dims = o.dims;
        bc.k1 = o.k1;
        bc.prober_rows = o.prober_rows;
        bc.threads = cfg.worker_threads();
        bc.seed = cfg.seed;
        auto corpus = eval::make_planted_corpus(pc);
        auto models = eval::fit_corpus_models(corpus, bc);
        auto probers = std::make_shared<const prober::ProberBundle>(models.probers);
        auto index = eval::index_corpus(corpus, probers);
        index.set_threads(bc.threads);
        auto report = eval::run_benchmark(index, corpus, models, bc);
        auto md = eval::to_markdown(report);
        auto js = eval::to_json(report);
        if (!o.out.empty()) {
            std::ofstream(o.out + ".md") << md;
            std::ofstream(o.out + ".json") << js << "\n";
        }
        if (o.json_output)
            out << js << "\n";
        else
            out << md;
    } else if (name == "serve") {
        service::serve(cfg);
    }
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    App a;
    build(a);
    try {
        a.app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << a.app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << a.app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        // subcommand --help lands here too
        if (e.get_exit_code() == 0) {
            for (const auto* s : a.app.get_subcommands()) out << s->help();
            return kExitOk;
        }
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    const auto subs = a.app.get_subcommands();
    const std::string name = subs.empty() ? "" : subs.front()->get_name();
    try {
        return dispatch(a, name, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const MissingArtifact& e) {
        err << "missing artifact: " << e.what() << "\n";
        return kExitMissing;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

std::map<std::string, std::vector<std::string>> flag_registry() {
    App a;
    build(a);
    std::map<std::string, std::vector<std::string>> out;
    auto collect = [](const CLI::App* app) {
        std::vector<std::string> flags;
        for (const auto* opt : app->get_options()) {
            for (const auto& l : opt->get_lnames()) flags.push_back("--" + l);
        }
        std::sort(flags.begin(), flags.end());
        return flags;
    };
    out[""] = collect(&a.app);
    for (const auto& [name, sub] : a.subs) out[name] = collect(sub);
    return out;
}

}  // namespace rainex::cli
