#include "rainex/csv.hpp"

#include <fstream>

#include "rainex/error.hpp"

namespace rainex::csv {

std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
    std::string s = "\"";
    for (char c : field) {
        if (c == '"') s += '"';
        s += c;
    }
    s += '"';
    return s;
}

std::vector<std::vector<std::string>> read(const std::filesystem::path& path,
                                           const std::vector<std::string>& header) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || split_line(line) != header)
        throw FormatError(path.string() + ": unexpected CSV header");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto row = split_line(line);
        if (row.size() != header.size())
            throw FormatError(path.string() + ": expected " + std::to_string(header.size()) +
                              " fields in '" + line + "'");
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace rainex::csv
