#include "cpo/evalharness/thresholds.hpp"

#include "cpo/common/jsonl.hpp"

namespace cpo::evalharness {

namespace {

constexpr const char* kFormat = "cpo-thresholds/1";

}  // namespace

ThresholdTable ThresholdTable::builtin() {
  ThresholdTable t;
  t.accuracies_ = {50, 55, 60, 65, 70, 75, 80, 85, 90, 95};
  t.rows_["BLEU"] = {0.27, 0.52, 0.78, 1.06, 1.39, 1.79, 2.34, 3.35, std::nullopt, std::nullopt};
  t.rows_["Comet-22"] = {0.03, 0.10, 0.18, 0.26, 0.35, 0.45, 0.56, 0.71, 0.94, 1.53};
  t.rows_["KIWI-22"] = {0.01, 0.08, 0.16, 0.24, 0.33, 0.42, 0.53, 0.67, 0.85, 1.18};
  t.rows_["XCOMET-XXL"] = {0.02, 0.19, 0.37, 0.56, 0.76, 0.98, 1.24, 1.55, 1.99, 2.74};
  t.rows_["KIWI-XXL"] = {0.06, 0.22, 0.39, 0.57, 0.77, 0.98, 1.24, 1.58, 2.08, 3.39};
  t.aliases_["oracle-sim"] = "KIWI-XXL";
  t.aliases_["chrf"] = "BLEU";
  t.validate();
  return t;
}

ThresholdTable ThresholdTable::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kFormat) throw Error("schema", std::string("threshold table format must be ") + kFormat);
  ThresholdTable t;
  t.accuracies_ = require_field(j, "accuracies").get<std::vector<int>>();
  for (const auto& [name, cells] : require_field(j, "metrics").items()) {
    auto& row = t.rows_[name];
    for (const auto& c : cells) row.push_back(c.is_null() ? std::nullopt : std::optional<double>(c.get<double>()));
  }
  if (const auto it = j.find("aliases"); it != j.end()) {
    for (const auto& [alias, target] : it->items()) t.aliases_[alias] = target.get<std::string>();
  }
  t.validate();
  return t;
}

ThresholdTable ThresholdTable::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error("schema", path.string() + ": " + e.what());
  }
}

nlohmann::json ThresholdTable::to_json() const {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [name, row] : rows_) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : row) cells.push_back(c ? nlohmann::json(*c) : nlohmann::json());
    metrics[name] = cells;
  }
  return {{"format", kFormat}, {"accuracies", accuracies_}, {"metrics", metrics}, {"aliases", aliases_}};
}

void ThresholdTable::validate() const {
  if (accuracies_.empty()) throw Error("schema", "threshold table has no accuracy columns");
  for (std::size_t i = 1; i < accuracies_.size(); ++i) {
    if (accuracies_[i] <= accuracies_[i - 1]) throw Error("schema", "accuracy columns must increase");
  }
  for (const auto& [name, row] : rows_) {
    if (row.size() != accuracies_.size()) throw Error("schema", "threshold row " + name + " has the wrong width");
    if (!row.front()) throw Error("schema", "threshold row " + name + " lacks a 50% cell");
    bool ended = false;
    double prev = -1;
    for (const auto& c : row) {
      if (!c) {
        ended = true;
        continue;
      }
      if (ended) throw Error("schema", "threshold row " + name + " has a gap");
      if (*c <= prev) throw Error("schema", "thresholds for " + name + " must strictly increase");
      prev = *c;
    }
  }
  for (const auto& [alias, target] : aliases_) {
    if (!rows_.count(target)) throw Error("schema", "alias " + alias + " points to unknown metric " + target);
  }
}

std::vector<std::string> ThresholdTable::metrics() const {
  std::vector<std::string> out;
  for (const auto& [name, row] : rows_) out.push_back(name);
  return out;
}

const std::string& ThresholdTable::resolve(std::string_view metric) const {
  if (const auto it = rows_.find(metric); it != rows_.end()) return it->first;
  if (const auto it = aliases_.find(metric); it != aliases_.end()) return it->second;
  throw Error("unknown-metric", "no thresholds for metric '" + std::string(metric) + "'");
}

const std::vector<std::optional<double>>& ThresholdTable::row(std::string_view metric) const {
  return rows_.find(resolve(metric))->second;
}

std::optional<double> ThresholdTable::threshold(std::string_view metric, int accuracy) const {
  const auto& r = row(metric);
  for (std::size_t i = 0; i < accuracies_.size(); ++i) {
    if (accuracies_[i] == accuracy) return r[i];
  }
  throw Error("unknown-accuracy", "no " + std::to_string(accuracy) + "% column");
}

std::optional<int> ThresholdTable::accuracy_band(std::string_view metric, double delta) const {
  const auto& r = row(metric);
  std::optional<int> band;
  for (std::size_t i = 0; i < accuracies_.size(); ++i) {
    if (r[i] && *r[i] <= delta) band = accuracies_[i];
  }
  return band;
}

}  // namespace cpo::evalharness
