#include "cpo/common/jsonl.hpp"

#include <fstream>
#include <sstream>

namespace cpo {

void read_jsonl(const std::filesystem::path& path, const std::function<void(const json&, std::size_t line)>& parse) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot read " + path.string());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line) + ": ";
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error("schema", where + "invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw Error("schema", where + "record is not a JSON object");
    try {
      parse(j, line);
    } catch (const Error& e) {
      throw Error(e.code(), where + e.what());
    } catch (const std::exception& e) {
      throw Error("schema", where + e.what());
    }
  }
}

void write_jsonl(const std::filesystem::path& path, std::span<const json> records) {
  std::ostringstream out;
  for (const auto& r : records) out << r.dump() << '\n';
  write_text(path, out.str());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot write " + path.string());
  out << text;
  if (!out) throw Error("io", "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const json& require_field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw Error("schema", std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const json& j, const char* key) {
  const json& v = require_field(j, key);
  if (!v.is_string()) throw Error("schema", std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

double require_number(const json& j, const char* key) {
  const json& v = require_field(j, key);
  if (!v.is_number()) throw Error("schema", std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

}  // namespace cpo
