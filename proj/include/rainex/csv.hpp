#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rainex::csv {

/// Splits one CSV line, honouring double quotes ("" escapes a quote).
std::vector<std::string> split_line(std::string_view line);
/// Quotes a field if it contains a comma, quote or newline.
std::string escape(std::string_view field);

/// Reads all rows; the first row is checked against `header` (exact match) and dropped.
std::vector<std::vector<std::string>> read(const std::filesystem::path& path,
                                           const std::vector<std::string>& header);

}  // namespace rainex::csv
