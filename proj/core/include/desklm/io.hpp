#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace desklm {

std::string read_file(const std::string& path);

/// Writes to `path.tmp` and renames over `path`, so readers never observe a
/// partially written file.
void write_file_atomic(const std::string& path, std::string_view bytes);

/// Parses line-delimited JSON. Blank lines are skipped; a malformed line
/// throws FormatError naming `path` and the 1-based line number.
std::vector<nlohmann::json> read_jsonl(const std::string& path);
std::vector<nlohmann::json> parse_jsonl(std::string_view text,
                                        const std::string& source = "<memory>");

std::string to_jsonl(const std::vector<nlohmann::json>& records);

/// Splits UTF-8 text into code points, each returned as its byte sequence.
/// Invalid bytes are returned one at a time.
std::vector<std::string_view> utf8_chars(std::string_view text);

}  // namespace desklm
