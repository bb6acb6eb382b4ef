#pragma once

#include <array>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

namespace cpo::evalharness {

struct HumanRating {
  std::string id;
  std::string system;
  int rating = 0;  // 0..6
};

HumanRating human_rating_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HumanRating& r);

struct HumanSystemSummary {
  std::string system;
  double avg_score = 0;
  double avg_rank = 0;
  double win_ratio = 0;  // strict wins plus ties, percent
  double tie = 0;        // percent, shared by both systems
};

/// Two systems rated on the same samples. Per sample the higher rating wins
/// (rank 1, loser rank 2); a tie counts as a win for both and ranks each 1.5.
/// Systems are ordered by first appearance.
std::array<HumanSystemSummary, 2> aggregate_human(std::span<const HumanRating> ratings);

/// Average ranks implied by published win and tie percentages under the same
/// rule: exclusive wins rank 1, exclusive losses 2, ties 1.5.
std::array<double, 2> ranks_from_percentages(double win_a, double win_b, double tie);

std::string render_human(const std::array<HumanSystemSummary, 2>& summary);
nlohmann::json human_json(const std::array<HumanSystemSummary, 2>& summary);

}  // namespace cpo::evalharness
