#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpo/evalharness/thresholds.hpp"
#include "cpo/prefdata/scorers.hpp"

namespace cpo::evalharness {

struct EvalExample {
  std::string id;
  std::string direction;
  std::string source;
  std::string oracle;
};

nlohmann::json to_json(const EvalExample& e);
EvalExample eval_example_from_json(const nlohmann::json& j);

/// One system's translation per corpus id.
struct SystemOutputs {
  std::string system;
  std::map<std::string, std::string> translations;
};

/// Reads {"id", "translation"} records; duplicate ids are rejected.
SystemOutputs outputs_from_records(std::string system, std::span<const nlohmann::json> records);

struct SystemScores {
  std::string system;
  std::vector<std::string> metrics;
  std::vector<double> means;                  // per metric
  std::vector<std::vector<double>> examples;  // [metric][example], corpus order
};

/// Scores every corpus example with each scorer of `spec` separately and
/// averages per scorer. Rejects outputs that miss corpus ids, naming them.
SystemScores evaluate(const SystemOutputs& outputs, std::span<const EvalExample> corpus,
                      const prefdata::ScorerSpec& spec, const prefdata::ScorerRegistry& registry);

enum class Marker { none, improved, lesser, decreased, unchanged };

/// "[++]", "[+]", "[-]", "[=]" or "".
std::string marker_text(Marker m);

struct Comparison {
  double delta = 0;            // system mean − baseline mean
  std::optional<int> band;     // estimated accuracy; nullopt below chance
  Marker marker = Marker::none;
};

/// Mean scores per system and metric, plus deltas against a baseline system
/// annotated with estimated-accuracy bands. [++] marks an improvement at or
/// above the 80% band, [+] a smaller improvement, [-] any decrease and [=]
/// a zero delta.
struct MetricReport {
  std::vector<std::string> metrics;
  std::vector<SystemScores> systems;
  std::optional<std::size_t> baseline;
  std::vector<std::vector<Comparison>> comparisons;  // [system][metric]
  /// Win ratio (%) of each system against the reference system on the first
  /// metric, when a reference was named.
  std::optional<std::string> reference;
  std::vector<std::optional<double>> win_ratios;
};

inline constexpr int kStrongBand = 80;

MetricReport build_report(std::vector<SystemScores> systems, const ThresholdTable& table,
                          const std::optional<std::string>& baseline = std::nullopt,
                          const std::optional<std::string>& reference = std::nullopt);

/// Plain-text table; the per-column maximum carries a trailing '*'.
std::string render_report(const MetricReport& report);
nlohmann::json report_json(const MetricReport& report);

}  // namespace cpo::evalharness
