#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace intentguard {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Case-insensitive substring search.
bool contains_ci(std::string_view haystack, std::string_view needle);

/// Whitespace-separated tokens (the scripted-backend token unit).
std::vector<std::string> split_whitespace(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// FNV-1a 64-bit hash, used for content-addressed ids and deterministic seeds.
std::uint64_t fnv1a64(std::string_view s);

std::string to_hex(std::uint64_t v);

/// SplitMix64 step; stretches one seed into independent per-item streams.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace intentguard
