#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rainex/pipeline.hpp"

namespace httplib {
class Server;
}

namespace rainex::service {

struct LogEntry {
    std::uint64_t id = 0;
    std::string wall_time;   // ISO-8601 UTC
    std::string query_time;  // as requested
    bool success = false;
    std::string message;
    double latency_ms = 0.0;
};

nlohmann::json to_json(const LogEntry& e);
LogEntry log_entry_from_json(const nlohmann::json& j);

/// Append-only NDJSON log. Each append is one write() followed by fsync(); a torn final line
/// left by a crash is cut off when the log is reopened.
class SearchLog {
public:
    explicit SearchLog(std::filesystem::path path);
    ~SearchLog();
    SearchLog(const SearchLog&) = delete;
    SearchLog& operator=(const SearchLog&) = delete;

    LogEntry append(const std::string& query_time, bool success, const std::string& message,
                    double latency_ms);
    /// Newest first.
    std::vector<LogEntry> recent(std::size_t limit) const;
    std::size_t size() const;
    /// Bytes dropped from a torn tail when the log was opened.
    std::size_t recovered_bytes() const { return recovered_bytes_; }

private:
    std::filesystem::path path_;
    int fd_ = -1;
    mutable std::mutex mutex_;
    std::vector<LogEntry> entries_;
    std::size_t recovered_bytes_ = 0;
};

struct Response {
    int status = 200;
    nlohmann::json body;
};

using Params = std::map<std::string, std::string>;

/// Request handlers of the /api/v1 surface, independent of the HTTP transport.
class Service {
public:
    Service(std::shared_ptr<const pipeline::Workspace> workspace, std::shared_ptr<SearchLog> log);

    Response frames(const Params& query) const;
    Response query(const std::string& body);
    Response perturb(const std::string& body) const;
    Response logs(const Params& query) const;
    Response importance(const Params& query) const;
    Response concepts() const;

    const SearchLog& log() const { return *log_; }

private:
    std::shared_ptr<const pipeline::Workspace> ws_;
    std::shared_ptr<SearchLog> log_;
};

/// Registers every /api/v1 route on the server.
void bind(httplib::Server& server, Service& service);

/// Loads the workspace and serves until the process is stopped.
void serve(const config::PipelineConfig& config);

}  // namespace rainex::service
