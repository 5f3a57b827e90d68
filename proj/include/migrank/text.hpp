#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace migrank::text {

// Lowercases ASCII letters and drops ASCII punctuation. May return "".
std::string normalize_token(std::string_view raw);

// Whitespace split, then normalize_token; empty results are dropped.
std::vector<std::string> tokenize(std::string_view text);

// Replaces each "{name}" with its value. Unknown placeholders are left as-is.
std::string render_template(std::string_view tpl,
                            const std::vector<std::pair<std::string_view, std::string_view>>& values);

}  // namespace migrank::text
