#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace intentguard {

/// Parses a line-delimited record file; blank lines are skipped. Errors
/// carry the 1-based line number. Throws ValidationError on an empty file.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

/// Writes one compact JSON object per line.
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

/// Appends a single record to a line-delimited log.
void append_jsonl(const std::filesystem::path& path, const nlohmann::json& record);

/// Reads a whole file into a string (throws ValidationError if unreadable).
std::string read_text_file(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& content);

/// Writes content to a temp file in the same directory, then renames it over
/// the target, so readers never observe a half-written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace intentguard
