#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace migrank::jsonl {

// Calls `visit(line_number, record)` for every non-blank line (1-based
// numbering). Malformed JSON raises a parse error naming path and line.
void for_each(const std::filesystem::path& path,
              const std::function<void(std::size_t, const nlohmann::json&)>& visit);

// Writes one compact JSON value per line, truncating the file.
void write(const std::filesystem::path& path, const std::vector<nlohmann::ordered_json>& records);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace migrank::jsonl
