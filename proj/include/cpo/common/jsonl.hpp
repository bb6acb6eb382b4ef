#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpo/common/error.hpp"

namespace cpo {

using nlohmann::json;

/// Calls `parse` on every non-blank line. Parse failures and exceptions thrown
/// by `parse` are rethrown as Error("schema") naming the file and 1-based line.
void read_jsonl(const std::filesystem::path& path, const std::function<void(const json&, std::size_t line)>& parse);

template <typename T>
std::vector<T> read_jsonl_as(const std::filesystem::path& path, T (*convert)(const json&)) {
  std::vector<T> out;
  read_jsonl(path, [&](const json& j, std::size_t) { out.push_back(convert(j)); });
  return out;
}

/// One compact record per line with sorted keys.
void write_jsonl(const std::filesystem::path& path, std::span<const json> records);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Field access that reports the missing or mistyped key by name.
const json& require_field(const json& j, const char* key);
std::string require_string(const json& j, const char* key);
double require_number(const json& j, const char* key);

}  // namespace cpo
