#include "cpo/prefdata/types.hpp"

#include <cmath>

#include "cpo/common/jsonl.hpp"

namespace cpo::prefdata {

std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::reference: return "reference";
    case Provenance::system_a: return "system_a";
    case Provenance::system_b: return "system_b";
  }
  return "?";
}

Provenance parse_provenance(std::string_view name) {
  for (Provenance p : kAllProvenances) {
    if (provenance_name(p) == name) return p;
  }
  throw Error("schema", "unknown provenance '" + std::string(name) + "'");
}

void TranslationTriplet::validate() const {
  bool seen[kProvenances] = {false, false, false};
  for (const auto& c : candidates) {
    auto& s = seen[static_cast<std::size_t>(c.provenance)];
    if (s) throw Error("schema", "triplet " + id + ": duplicate provenance " + provenance_name(c.provenance));
    s = true;
  }
  if (scores) {
    for (double s : *scores) {
      if (!(s >= 0 && s <= 100)) throw Error("schema", "triplet " + id + ": score outside [0, 100]");
    }
  }
}

const Candidate& TranslationTriplet::candidate(Provenance p) const {
  for (const auto& c : candidates) {
    if (c.provenance == p) return c;
  }
  throw Error("schema", "triplet " + id + ": no " + provenance_name(p) + " candidate");
}

double TranslationTriplet::score(Provenance p) const {
  if (!scores) throw Error("unscored", "triplet " + id + " has no scores");
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].provenance == p) return (*scores)[i];
  }
  throw Error("schema", "triplet " + id + ": no " + provenance_name(p) + " candidate");
}

nlohmann::json to_json(const TranslationTriplet& t) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : t.candidates) cands.push_back({{"text", c.text}, {"provenance", provenance_name(c.provenance)}});
  nlohmann::json j = {{"id", t.id}, {"direction", t.direction}, {"source", t.source}, {"candidates", cands}};
  if (t.scores) j["scores"] = *t.scores;
  return j;
}

TranslationTriplet triplet_from_json(const nlohmann::json& j) {
  TranslationTriplet t;
  t.id = require_string(j, "id");
  t.direction = require_string(j, "direction");
  t.source = require_string(j, "source");
  const auto& cands = require_field(j, "candidates");
  if (!cands.is_array() || cands.size() != 3) throw Error("schema", "field 'candidates' must hold exactly 3 entries");
  for (std::size_t i = 0; i < 3; ++i) {
    t.candidates[i].text = require_string(cands[i], "text");
    t.candidates[i].provenance = parse_provenance(require_string(cands[i], "provenance"));
  }
  if (const auto it = j.find("scores"); it != j.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != 3) throw Error("schema", "field 'scores' must hold exactly 3 numbers");
    std::array<double, 3> s{};
    for (std::size_t i = 0; i < 3; ++i) {
      if (!(*it)[i].is_number()) throw Error("schema", "field 'scores' must hold exactly 3 numbers");
      s[i] = (*it)[i].get<double>();
    }
    t.scores = s;
  }
  t.validate();
  return t;
}

nlohmann::json to_json(const PreferencePair& p) {
  return {{"id", p.id},
          {"direction", p.direction},
          {"source", p.source},
          {"preferred", p.preferred},
          {"dispreferred", p.dispreferred},
          {"prov_w", provenance_name(p.prov_w)},
          {"prov_l", provenance_name(p.prov_l)},
          {"score_w", p.score_w},
          {"score_l", p.score_l}};
}

PreferencePair pair_from_json(const nlohmann::json& j) {
  PreferencePair p;
  p.id = require_string(j, "id");
  p.direction = require_string(j, "direction");
  p.source = require_string(j, "source");
  p.preferred = require_string(j, "preferred");
  p.dispreferred = require_string(j, "dispreferred");
  p.prov_w = parse_provenance(require_string(j, "prov_w"));
  p.prov_l = parse_provenance(require_string(j, "prov_l"));
  p.score_w = require_number(j, "score_w");
  p.score_l = require_number(j, "score_l");
  if (p.score_w < p.score_l) throw Error("schema", "pair " + p.id + ": score_w below score_l");
  return p;
}

}  // namespace cpo::prefdata
