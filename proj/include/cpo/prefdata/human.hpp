#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpo/prefdata/types.hpp"

namespace cpo::prefdata {

enum class Judgment { a, b, tie };

Judgment parse_judgment(std::string_view s);
std::string judgment_name(Judgment j);

/// One human pairwise comparison of two candidates for a source.
struct PairwiseRecord {
  std::string id;
  std::string source;
  std::string a;
  std::string b;
  Judgment judgment = Judgment::tie;
};

nlohmann::json to_json(const PairwiseRecord& r);
PairwiseRecord pairwise_from_json(const nlohmann::json& j);

struct PairwiseIngest {
  std::vector<PreferencePair> pairs;
  std::size_t a_wins = 0;
  std::size_t b_wins = 0;
  std::size_t ties = 0;
};

/// Winners become preferred with score 100, losers dis-preferred with 0;
/// candidate a is labeled system_a and b system_b. Ties are counted and
/// dropped.
PairwiseIngest ingest_pairwise(std::span<const PairwiseRecord> records);

}  // namespace cpo::prefdata
