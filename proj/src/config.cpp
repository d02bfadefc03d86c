#include "rainex/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>

#include "rainex/error.hpp"
#include "rainex/parallel.hpp"

namespace rainex::config {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void check_key(const std::string& key, const std::string& origin) {
    const auto& keys = known_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
        throw ConfigError(origin + ": unknown setting '" + key + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const std::string& origin) {
    try {
        std::size_t used = 0;
        T out;
        if constexpr (std::is_floating_point_v<T>) {
            out = T(std::stod(value, &used));
        } else {
            if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
            out = T(std::stoull(value, &used));
        }
        if (used != value.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError(origin + ": invalid value '" + value + "' for " + key);
    }
}

}  // namespace

const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys{
        "data_dir", "work_dir", "host", "port", "k1", "k2", "min_gap_days",
        "d", "l1", "epsilon", "min_samples", "seed", "threads"};
    return keys;
}

void PipelineConfig::validate() const {
    if (d < 1) throw ConfigError("d must be >= 1");
    if (k1 < 1) throw ConfigError("k1 must be >= 1");
    if (k2 < 1) throw ConfigError("k2 must be >= 1");
    if (!(epsilon > 0)) throw ConfigError("epsilon must be > 0");
    if (min_samples < 1) throw ConfigError("min_samples must be >= 1");
    if (!(l1 >= 0)) throw ConfigError("l1 must be >= 0");
    if (!(min_gap_days >= 0)) throw ConfigError("min_gap_days must be >= 0");
    if (port < 0 || port > 65535) throw ConfigError("port must be in 0..65535");
}

unsigned PipelineConfig::worker_threads() const { return threads ? threads : default_threads(); }

Settings read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("config file not found: " + path.string());
    Settings out;
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        auto key = trim(line.substr(0, eq));
        check_key(key, path.string() + ":" + std::to_string(lineno));
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

Settings env_settings(const std::function<const char*(const char*)>& lookup) {
    Settings out;
    for (const auto& key : known_keys()) {
        std::string name = "RAINEX_";
        for (char c : key) name += char(std::toupper(static_cast<unsigned char>(c)));
        const char* v = lookup ? lookup(name.c_str()) : std::getenv(name.c_str());
        if (v) out[key] = v;
    }
    return out;
}

void apply(PipelineConfig& c, const Settings& settings, const std::string& origin) {
    for (const auto& [key, value] : settings) {
        check_key(key, origin);
        if (key == "data_dir") c.data_dir = value;
        else if (key == "work_dir") c.work_dir = value;
        else if (key == "host") c.host = value;
        else if (key == "port") c.port = int(parse_number<unsigned>(key, value, origin));
        else if (key == "k1") c.k1 = parse_number<std::size_t>(key, value, origin);
        else if (key == "k2") c.k2 = parse_number<std::size_t>(key, value, origin);
        else if (key == "min_gap_days") c.min_gap_days = parse_number<double>(key, value, origin);
        else if (key == "d") c.d = parse_number<std::size_t>(key, value, origin);
        else if (key == "l1") c.l1 = parse_number<double>(key, value, origin);
        else if (key == "epsilon") c.epsilon = parse_number<double>(key, value, origin);
        else if (key == "min_samples") c.min_samples = parse_number<std::size_t>(key, value, origin);
        else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value, origin);
        else if (key == "threads") c.threads = parse_number<unsigned>(key, value, origin);
    }
}

PipelineConfig resolve(const std::optional<std::filesystem::path>& file, const Settings& flags,
                       const std::function<const char*(const char*)>& lookup) {
    PipelineConfig c;
    if (file) apply(c, read_config_file(*file), file->string());
    apply(c, env_settings(lookup), "environment");
    apply(c, flags, "command line");
    c.validate();
    return c;
}

}  // namespace rainex::config
