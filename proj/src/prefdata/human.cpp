#include "cpo/prefdata/human.hpp"

#include "cpo/common/jsonl.hpp"

namespace cpo::prefdata {

Judgment parse_judgment(std::string_view s) {
  if (s == "a") return Judgment::a;
  if (s == "b") return Judgment::b;
  if (s == "tie") return Judgment::tie;
  throw Error("schema", "judgment must be one of a, b, tie; got '" + std::string(s) + "'");
}

std::string judgment_name(Judgment j) {
  switch (j) {
    case Judgment::a: return "a";
    case Judgment::b: return "b";
    case Judgment::tie: return "tie";
  }
  return "?";
}

nlohmann::json to_json(const PairwiseRecord& r) {
  return {{"id", r.id}, {"source", r.source}, {"a", r.a}, {"b", r.b}, {"judgment", judgment_name(r.judgment)}};
}

PairwiseRecord pairwise_from_json(const nlohmann::json& j) {
  return {require_string(j, "id"), require_string(j, "source"), require_string(j, "a"), require_string(j, "b"),
          parse_judgment(require_string(j, "judgment"))};
}

PairwiseIngest ingest_pairwise(std::span<const PairwiseRecord> records) {
  PairwiseIngest out;
  for (const auto& r : records) {
    if (r.judgment == Judgment::tie) {
      ++out.ties;
      continue;
    }
    const bool a_wins = r.judgment == Judgment::a;
    ++(a_wins ? out.a_wins : out.b_wins);
    PreferencePair p;
    p.id = r.id;
    p.direction = "";
    p.source = r.source;
    p.preferred = a_wins ? r.a : r.b;
    p.dispreferred = a_wins ? r.b : r.a;
    p.prov_w = a_wins ? Provenance::system_a : Provenance::system_b;
    p.prov_l = a_wins ? Provenance::system_b : Provenance::system_a;
    p.score_w = 100;
    p.score_l = 0;
    out.pairs.push_back(std::move(p));
  }
  return out;
}

}  // namespace cpo::prefdata
