#include "cpo/evalharness/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "cpo/common/jsonl.hpp"
#include "cpo/prefdata/selection.hpp"

namespace cpo::evalharness {

namespace {

std::string fixed(double v, const char* fmt = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::size_t index_of(const std::vector<SystemScores>& systems, const std::string& name) {
  for (std::size_t i = 0; i < systems.size(); ++i) {
    if (systems[i].system == name) return i;
  }
  throw Error("unknown-system", "no system named '" + name + "' in the report");
}

}  // namespace

nlohmann::json to_json(const EvalExample& e) {
  return {{"id", e.id}, {"direction", e.direction}, {"source", e.source}, {"oracle", e.oracle}};
}

EvalExample eval_example_from_json(const nlohmann::json& j) {
  return {require_string(j, "id"), require_string(j, "direction"), require_string(j, "source"),
          require_string(j, "oracle")};
}

SystemOutputs outputs_from_records(std::string system, std::span<const nlohmann::json> records) {
  SystemOutputs out{std::move(system), {}};
  for (const auto& r : records) {
    const std::string id = require_string(r, "id");
    if (!out.translations.emplace(id, require_string(r, "translation")).second) {
      throw Error("schema", "duplicate output id '" + id + "'");
    }
  }
  return out;
}

SystemScores evaluate(const SystemOutputs& outputs, std::span<const EvalExample> corpus,
                      const prefdata::ScorerSpec& spec, const prefdata::ScorerRegistry& registry) {
  spec.validate(registry);
  if (corpus.empty()) throw Error("empty", "evaluation corpus is empty");
  std::vector<std::string> missing;
  for (const auto& e : corpus) {
    if (!outputs.translations.count(e.id)) missing.push_back(e.id);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 10) list += ", ...";
    throw Error("misaligned", "system " + outputs.system + " lacks " + std::to_string(missing.size()) +
                                  " corpus id(s): " + list);
  }

  SystemScores s;
  s.system = outputs.system;
  s.metrics = spec.scorers;
  for (const auto& metric : spec.scorers) {
    const prefdata::ScorerSpec single{{metric}};
    std::vector<double> per;
    double sum = 0;
    for (const auto& e : corpus) {
      per.push_back(single.score(registry, outputs.translations.at(e.id), {e.source, e.oracle}));
      sum += per.back();
    }
    s.means.push_back(sum / static_cast<double>(corpus.size()));
    s.examples.push_back(std::move(per));
  }
  return s;
}

std::string marker_text(Marker m) {
  switch (m) {
    case Marker::none: return "";
    case Marker::improved: return "[++]";
    case Marker::lesser: return "[+]";
    case Marker::decreased: return "[-]";
    case Marker::unchanged: return "[=]";
  }
  return "";
}

MetricReport build_report(std::vector<SystemScores> systems, const ThresholdTable& table,
                          const std::optional<std::string>& baseline, const std::optional<std::string>& reference) {
  if (systems.empty()) throw Error("empty", "report needs at least one system");
  MetricReport r;
  r.metrics = systems.front().metrics;
  for (const auto& s : systems) {
    if (s.metrics != r.metrics) throw Error("misaligned", "system " + s.system + " was scored with other metrics");
  }
  r.systems = std::move(systems);
  r.comparisons.assign(r.systems.size(), std::vector<Comparison>(r.metrics.size()));
  if (baseline) {
    const std::size_t b = index_of(r.systems, *baseline);
    r.baseline = b;
    for (std::size_t s = 0; s < r.systems.size(); ++s) {
      if (s == b) continue;
      for (std::size_t m = 0; m < r.metrics.size(); ++m) {
        Comparison& c = r.comparisons[s][m];
        c.delta = r.systems[s].means[m] - r.systems[b].means[m];
        c.band = table.accuracy_band(r.metrics[m], c.delta);
        if (c.delta > 0) {
          c.marker = c.band && *c.band >= kStrongBand ? Marker::improved : Marker::lesser;
        } else {
          c.marker = c.delta < 0 ? Marker::decreased : Marker::unchanged;
        }
      }
    }
  }
  r.win_ratios.assign(r.systems.size(), std::nullopt);
  if (reference) {
    const std::size_t ref = index_of(r.systems, *reference);
    r.reference = reference;
    for (std::size_t s = 0; s < r.systems.size(); ++s) {
      if (s == ref || r.metrics.empty()) continue;
      r.win_ratios[s] = prefdata::win_ratio(r.systems[s].examples.front(), r.systems[ref].examples.front());
    }
  }
  return r;
}

std::string render_report(const MetricReport& report) {
  const std::size_t rows = report.systems.size(), cols = report.metrics.size();
  std::vector<std::vector<std::string>> cells(rows + 1);
  cells[0].push_back("System");
  for (const auto& m : report.metrics) cells[0].push_back(m);
  const bool with_wins = report.reference.has_value() && cols > 0;
  if (with_wins) cells[0].push_back("Win Ratio (%)");

  std::vector<double> best(cols, -1e300);
  for (const auto& s : report.systems) {
    for (std::size_t m = 0; m < cols; ++m) best[m] = std::max(best[m], s.means[m]);
  }
  for (std::size_t s = 0; s < rows; ++s) {
    auto& row = cells[s + 1];
    row.push_back(report.systems[s].system);
    for (std::size_t m = 0; m < cols; ++m) {
      std::string cell = fixed(report.systems[s].means[m]);
      if (rows > 1 && report.systems[s].means[m] == best[m]) cell += "*";
      const Comparison& c = report.comparisons[s][m];
      if (c.marker != Marker::none) cell += " " + marker_text(c.marker) + " " + fixed(c.delta, "%+.2f");
      row.push_back(cell);
    }
    if (with_wins) row.push_back(report.win_ratios[s] ? fixed(*report.win_ratios[s]) : "-");
  }

  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c) line += " | ";
      line += cells[r][c];
      if (c + 1 < cells[r].size()) line.append(width[c] - cells[r][c].size(), ' ');
    }
    out += line + "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 3 : 0);
      out += std::string(total, '-') + "\n";
    }
  }
  if (report.baseline) {
    out += "deltas against " + report.systems[*report.baseline].system +
           "; [++] >= " + std::to_string(kStrongBand) + "% estimated accuracy, [+] smaller gain, [-] loss, [=] no change\n";
  }
  return out;
}

nlohmann::json report_json(const MetricReport& report) {
  nlohmann::json systems = nlohmann::json::array();
  for (std::size_t s = 0; s < report.systems.size(); ++s) {
    nlohmann::json metrics = nlohmann::json::object();
    for (std::size_t m = 0; m < report.metrics.size(); ++m) {
      nlohmann::json entry = {{"mean", report.systems[s].means[m]}};
      const Comparison& c = report.comparisons[s][m];
      if (c.marker != Marker::none) {
        entry["delta"] = c.delta;
        entry["band"] = c.band ? nlohmann::json(*c.band) : nlohmann::json();
        entry["marker"] = marker_text(c.marker);
      }
      metrics[report.metrics[m]] = entry;
    }
    nlohmann::json row = {{"system", report.systems[s].system}, {"metrics", metrics}};
    if (report.win_ratios[s]) row["win_ratio"] = *report.win_ratios[s];
    systems.push_back(row);
  }
  nlohmann::json j = {{"metrics", report.metrics}, {"systems", systems}};
  if (report.baseline) j["baseline"] = report.systems[*report.baseline].system;
  if (report.reference) j["reference"] = *report.reference;
  return j;
}

}  // namespace cpo::evalharness
