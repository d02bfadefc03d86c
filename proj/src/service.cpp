#include "rainex/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rainex/error.hpp"

namespace rainex::service {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const LogEntry& e) {
    return {{"id", e.id},
            {"wall_time", e.wall_time},
            {"query_time", e.query_time},
            {"status", e.success ? "success" : "error"},
            {"message", e.message},
            {"latency_ms", e.latency_ms}};
}

LogEntry log_entry_from_json(const json& j) {
    LogEntry e;
    e.id = j.at("id").get<std::uint64_t>();
    e.wall_time = j.at("wall_time").get<std::string>();
    e.query_time = j.at("query_time").get<std::string>();
    auto status = j.at("status").get<std::string>();
    if (status != "success" && status != "error") throw FormatError("bad log status " + status);
    e.success = status == "success";
    e.message = j.at("message").get<std::string>();
    e.latency_ms = j.at("latency_ms").get<double>();
    return e;
}

SearchLog::SearchLog(fs::path path) : path_(std::move(path)) {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::string text;
    if (fs::exists(path_)) {
        std::ifstream in(path_, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    // keep the longest prefix of complete, well-formed lines with increasing ids
    std::size_t good = 0;
    while (good < text.size()) {
        auto nl = text.find('\n', good);
        if (nl == std::string::npos) break;
        try {
            auto e = log_entry_from_json(json::parse(text.substr(good, nl - good)));
            if (!entries_.empty() && e.id <= entries_.back().id) break;
            entries_.push_back(std::move(e));
        } catch (const std::exception&) {
            break;
        }
        good = nl + 1;
    }
    recovered_bytes_ = text.size() - good;
    if (recovered_bytes_ > 0) fs::resize_file(path_, good);
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open search log " + path_.string() + ": " + std::strerror(errno));
}

SearchLog::~SearchLog() {
    if (fd_ >= 0) ::close(fd_);
}

LogEntry SearchLog::append(const std::string& query_time, bool success, const std::string& message,
                           double latency_ms) {
    std::lock_guard lock(mutex_);
    LogEntry e;
    e.id = entries_.empty() ? 1 : entries_.back().id + 1;
    auto now = std::chrono::system_clock::now();
    e.wall_time = format_iso8601(
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count());
    e.query_time = query_time;
    e.success = success;
    e.message = message;
    e.latency_ms = latency_ms;
    std::string line = to_json(e).dump() + "\n";
    const char* p = line.data();
    std::size_t left = line.size();
    while (left > 0) {
        auto n = ::write(fd_, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error("search log write failed: " + std::string(std::strerror(errno)));
        }
        p += n;
        left -= std::size_t(n);
    }
    if (::fsync(fd_) != 0) throw Error("search log fsync failed: " + std::string(std::strerror(errno)));
    entries_.push_back(e);
    return e;
}

std::vector<LogEntry> SearchLog::recent(std::size_t limit) const {
    std::lock_guard lock(mutex_);
    std::vector<LogEntry> out;
    for (auto it = entries_.rbegin(); it != entries_.rend() && out.size() < limit; ++it)
        out.push_back(*it);
    return out;
}

std::size_t SearchLog::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

namespace {

Response error(int status, const std::string& message) {
    return {status, {{"error", message}}};
}

template <typename Fn>
Response guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const NotFound& e) {
        return error(404, e.what());
    } catch (const MissingArtifact& e) {
        return error(409, e.what());
    } catch (const DataError& e) {
        return error(422, e.what());
    } catch (const ConfigError& e) {
        return error(422, e.what());
    } catch (const json::exception& e) {
        return error(422, std::string("malformed request: ") + e.what());
    } catch (const std::exception& e) {
        return error(500, e.what());
    }
}

Timestamp parse_time(const std::string& text) {
    Timestamp t = parse_iso8601(text);
    if (!on_frame_lattice(t)) throw DataError("time " + text + " is not on the 10-minute lattice");
    return t;
}

std::optional<std::string> param(const Params& p, const std::string& key) {
    auto it = p.find(key);
    if (it == p.end()) return std::nullopt;
    return it->second;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        if (text.empty() || text[0] == '-') throw std::invalid_argument(key);
        auto v = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument(key);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("invalid " + key + " '" + text + "'");
    }
}

json request_json(const std::string& body) {
    auto j = json::parse(body);
    if (!j.is_object()) throw ConfigError("request body must be a JSON object");
    return j;
}

}  // namespace

Service::Service(std::shared_ptr<const pipeline::Workspace> workspace, std::shared_ptr<SearchLog> log)
    : ws_(std::move(workspace)), log_(std::move(log)) {
    if (!ws_ || !log_) throw ConfigError("service needs a workspace and a search log");
}

Response Service::frames(const Params& query) const {
    return guarded([&]() -> Response {
        const auto& archive = ws_->archive();
        auto time = param(query, "time");
        if (!time) {
            json times = json::array();
            for (auto t : archive.times()) times.push_back(format_iso8601(t));
            return {200, {{"times", times}}};
        }
        Timestamp t = parse_time(*time);
        auto frame = archive.frame(t);
        auto mask = preprocess::watershed_segments(frame);
        std::vector<float> grid(frame.rain.begin(), frame.rain.end());
        std::vector<std::uint8_t> bytes(grid.size() * sizeof(float));
        std::memcpy(bytes.data(), grid.data(), bytes.size());
        json segs = json::array();
        for (const auto& s : mask.segments)
            segs.push_back({{"id", s.id},
                            {"bbox", {s.bbox.row0, s.bbox.col0, s.bbox.row1, s.bbox.col1}},
                            {"pixels", s.pixels}});
        const auto& e = frame.extent;
        return {200,
                {{"time", format_iso8601(t)},
                 {"height", frame.height},
                 {"width", frame.width},
                 {"grid", pipeline::base64_encode(bytes)},
                 {"grid_encoding", "base64-f32le"},
                 {"extent", {{"lat_min", e.lat_min}, {"lat_max", e.lat_max},
                             {"lon_min", e.lon_min}, {"lon_max", e.lon_max}}},
                 {"reference", archive.has(t - (preprocess::kLaggedFrames - 1) * kFrameStep)},
                 {"segments", segs}}};
    });
}

Response Service::query(const std::string& body) {
    auto start = std::chrono::steady_clock::now();
    std::string query_time;
    Response r = guarded([&]() -> Response {
        auto j = request_json(body);
        query_time = j.at("time").get<std::string>();
        Timestamp t = parse_time(query_time);
        auto segment = j.at("segment_id").get<std::int32_t>();
        const auto& cfg = ws_->config();
        auto k1 = j.value("k1", cfg.k1);
        auto k2 = j.value("k2", cfg.k2);
        auto gap = j.value("min_gap_days", cfg.min_gap_days);
        if (k1 < 1 || k2 < 1) throw ConfigError("k1 and k2 must be >= 1");
        auto res = ws_->query(t, segment, k1, k2, gap);
        return {200, pipeline::to_json(res, ws_->labels())};
    });
    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    std::string message;
    if (r.status == 200)
        message = std::to_string(r.body["neighbors"].size()) + " neighbours";
    else
        message = r.body["error"].get<std::string>();
    auto entry = log_->append(query_time, r.status == 200, message, ms);
    r.body["log_id"] = entry.id;
    return r;
}

Response Service::perturb(const std::string& body) const {
    return guarded([&]() -> Response {
        auto j = request_json(body);
        Timestamp t = parse_time(j.at("time").get<std::string>());
        auto segment = j.at("segment_id").get<std::int32_t>();
        auto concept_id = j.at("concept_id").get<int>();
        std::vector<double> alphas;
        const auto& a = j.at("alpha");
        if (a.is_array())
            alphas = a.get<std::vector<double>>();
        else
            alphas.push_back(a.get<double>());
        if (alphas.empty()) throw ConfigError("alpha list is empty");
        auto results = ws_->perturb(t, segment, concept_id, alphas);
        json out;
        out["time"] = format_iso8601(t);
        out["segment_id"] = segment;
        out["concept_id"] = concept_id;
        out["baseline"] = pipeline::to_json(results.front().baseline);
        out["results"] = json::array();
        for (std::size_t i = 0; i < results.size(); ++i)
            out["results"].push_back({{"alpha", alphas[i]},
                                      {"perturbed", pipeline::to_json(results[i].perturbed)},
                                      {"changed_pixels", results[i].changed_pixels}});
        return {200, out};
    });
}

Response Service::logs(const Params& query) const {
    return guarded([&]() -> Response {
        std::size_t limit = 50;
        if (auto l = param(query, "limit")) limit = parse_count("limit", *l);
        json entries = json::array();
        for (const auto& e : log_->recent(limit)) entries.push_back(to_json(e));
        return {200, {{"entries", entries}, {"total", log_->size()}}};
    });
}

Response Service::importance(const Params& query) const {
    return guarded([&]() -> Response {
        auto wrapper = attribution::WrapperKind::LogitSum;
        if (auto w = param(query, "wrapper")) wrapper = attribution::parse_wrapper(*w);
        auto path = ws_->report_path(wrapper, ".json");
        if (!fs::exists(path))
            throw MissingArtifact("importance report for " + attribution::to_string(wrapper) +
                                  " has not been generated: " + path.string());
        std::ifstream in(path);
        auto report = attribution::report_from_json(json::parse(in));
        return {200, attribution::to_json(report)};
    });
}

Response Service::concepts() const {
    return guarded([&]() -> Response {
        const auto& labels = ws_->labels();
        std::map<int, std::size_t> positives;
        for (const auto& [key, ids] : labels.assignments)
            for (int id : ids) ++positives[id];
        const prober::ProberBundle* bundle = nullptr;
        try {
            bundle = &ws_->probers();
        } catch (const MissingArtifact&) {
        }
        json out = json::array();
        for (const auto& c : labels.concepts)
            out.push_back({{"concept_id", c.id},
                           {"name", c.name},
                           {"source", prober::to_string(c.source)},
                           {"positives", positives[c.id]},
                           {"has_prober", bundle && bundle->find(c.id) != nullptr}});
        return {200, {{"concepts", out}}};
    });
}

}  // namespace rainex::service
