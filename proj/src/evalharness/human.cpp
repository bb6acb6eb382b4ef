#include "cpo/evalharness/human.hpp"

#include <cstdio>
#include <algorithm>
#include <map>

#include "cpo/common/jsonl.hpp"

namespace cpo::evalharness {

HumanRating human_rating_from_json(const nlohmann::json& j) {
  HumanRating r{require_string(j, "id"), require_string(j, "system"), 0};
  const auto& v = require_field(j, "rating");
  if (!v.is_number_integer()) throw Error("schema", "field 'rating' must be an integer");
  r.rating = v.get<int>();
  if (r.rating < 0 || r.rating > 6) throw Error("schema", "rating " + std::to_string(r.rating) + " outside 0..6");
  return r;
}

nlohmann::json to_json(const HumanRating& r) { return {{"id", r.id}, {"system", r.system}, {"rating", r.rating}}; }

std::array<HumanSystemSummary, 2> aggregate_human(std::span<const HumanRating> ratings) {
  std::vector<std::string> systems;
  std::array<std::map<std::string, int>, 2> by_system;
  for (const auto& r : ratings) {
    if (r.rating < 0 || r.rating > 6) throw Error("schema", "rating " + std::to_string(r.rating) + " outside 0..6");
    auto it = std::find(systems.begin(), systems.end(), r.system);
    if (it == systems.end()) {
      if (systems.size() == 2) throw Error("schema", "human ratings cover more than two systems");
      systems.push_back(r.system);
      it = systems.end() - 1;
    }
    auto& table = by_system[static_cast<std::size_t>(it - systems.begin())];
    if (!table.emplace(r.id, r.rating).second) {
      throw Error("schema", "sample " + r.id + " rated twice for " + r.system);
    }
  }
  if (systems.size() != 2) throw Error("schema", "human ratings must cover exactly two systems");
  for (std::size_t s = 0; s < 2; ++s) {
    for (const auto& [id, rating] : by_system[s]) {
      if (!by_system[1 - s].count(id)) {
        throw Error("unmatched", "sample " + id + " is rated for " + systems[s] + " only");
      }
    }
  }

  const double n = static_cast<double>(by_system[0].size());
  std::array<double, 2> score{}, rank{}, wins{};
  double ties = 0;
  for (const auto& [id, a] : by_system[0]) {
    const int b = by_system[1].at(id);
    score[0] += a;
    score[1] += b;
    if (a == b) {
      ties += 1;
      rank[0] += 1.5;
      rank[1] += 1.5;
    } else {
      const std::size_t w = a > b ? 0 : 1;
      wins[w] += 1;
      rank[w] += 1;
      rank[1 - w] += 2;
    }
  }
  std::array<HumanSystemSummary, 2> out;
  for (std::size_t s = 0; s < 2; ++s) {
    out[s] = {systems[s], score[s] / n, rank[s] / n, 100.0 * (wins[s] + ties) / n, 100.0 * ties / n};
  }
  return out;
}

std::array<double, 2> ranks_from_percentages(double win_a, double win_b, double tie) {
  const double only_a = (win_a - tie) / 100.0, only_b = (win_b - tie) / 100.0, t = tie / 100.0;
  return {only_a + 2 * only_b + 1.5 * t, only_b + 2 * only_a + 1.5 * t};
}

std::string render_human(const std::array<HumanSystemSummary, 2>& summary) {
  std::string out = "System | Avg. Score | Avg. Rank | Win Ratio (%) | Tie (%)\n";
  for (const auto& s : summary) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s | %.2f | %.2f | %.2f | %.2f\n", s.system.c_str(), s.avg_score, s.avg_rank,
                  s.win_ratio, s.tie);
    out += buf;
  }
  return out;
}

nlohmann::json human_json(const std::array<HumanSystemSummary, 2>& summary) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : summary) {
    out.push_back({{"system", s.system},
                   {"avg_score", s.avg_score},
                   {"avg_rank", s.avg_rank},
                   {"win_ratio", s.win_ratio},
                   {"tie", s.tie}});
  }
  return out;
}

}  // namespace cpo::evalharness
