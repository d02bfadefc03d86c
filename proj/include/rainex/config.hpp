#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rainex::config {

/// Settings shared by the CLI and the service. Paths below data_dir are inputs produced by
/// gen-data; paths below work_dir are pipeline outputs.
struct PipelineConfig {
    std::filesystem::path data_dir = "data";
    std::filesystem::path work_dir = "work";
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t k1 = 3;
    std::size_t k2 = 3;
    double min_gap_days = 30.0;
    std::size_t d = 300;
    double l1 = 1e-4;
    double epsilon = 1e-3;
    std::size_t min_samples = 20;
    std::uint64_t seed = 42;
    unsigned threads = 0;  // 0 = logical cores

    void validate() const;
    unsigned worker_threads() const;

    std::filesystem::path radar_dir() const { return data_dir / "radar"; }
    std::filesystem::path weights_file() const { return data_dir / "model.toyw"; }
    std::filesystem::path labels_file() const { return data_dir / "labels.csv"; }
    std::filesystem::path concepts_file() const { return data_dir / "concepts.csv"; }
    std::filesystem::path prune_file() const { return work_dir / "prune.bin"; }
    std::filesystem::path features_file() const { return work_dir / "features.fstr"; }
    std::filesystem::path probers_file() const { return work_dir / "probers.prbr"; }
    std::filesystem::path pc_map_file() const { return work_dir / "pcmap.pcmp"; }
    std::filesystem::path index_file() const { return work_dir / "index.nidx"; }
    std::filesystem::path reports_dir() const { return work_dir / "reports"; }
    std::filesystem::path search_log_file() const { return work_dir / "search_log.ndjson"; }
};

using Settings = std::map<std::string, std::string>;

/// Every recognised key, in documentation order.
const std::vector<std::string>& known_keys();

/// `key = value` lines; `#` starts a comment. Unknown keys raise ConfigError.
Settings read_config_file(const std::filesystem::path& path);

/// RAINEX_<KEY> variables (upper-case key). `lookup` defaults to std::getenv.
Settings env_settings(const std::function<const char*(const char*)>& lookup = {});

/// Applies settings on top of `config`; malformed values raise ConfigError naming the key.
void apply(PipelineConfig& config, const Settings& settings, const std::string& origin);

/// defaults < config file < environment < flags.
PipelineConfig resolve(const std::optional<std::filesystem::path>& file, const Settings& flags,
                       const std::function<const char*(const char*)>& lookup = {});

}  // namespace rainex::config
