#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace cpo::prefdata {

/// Where a candidate translation came from. The declaration order is also the
/// tie-break priority: reference first, then system_a, then system_b.
enum class Provenance { reference = 0, system_a = 1, system_b = 2 };
inline constexpr std::size_t kProvenances = 3;
inline constexpr std::array<Provenance, kProvenances> kAllProvenances{Provenance::reference, Provenance::system_a,
                                                                       Provenance::system_b};

std::string provenance_name(Provenance p);
Provenance parse_provenance(std::string_view name);

struct Candidate {
  std::string text;
  Provenance provenance = Provenance::reference;
};

/// One source sentence with three candidates and, once scored, one score in
/// [0, 100] per candidate.
struct TranslationTriplet {
  std::string id;
  std::string direction;
  std::string source;
  std::array<Candidate, 3> candidates;
  std::optional<std::array<double, 3>> scores;

  /// Provenances must be distinct and scores within [0, 100].
  void validate() const;
  const Candidate& candidate(Provenance p) const;
  double score(Provenance p) const;
};

struct PreferencePair {
  std::string id;
  std::string direction;
  std::string source;
  std::string preferred;
  std::string dispreferred;
  Provenance prov_w = Provenance::reference;
  Provenance prov_l = Provenance::reference;
  double score_w = 0;
  double score_l = 0;
};

nlohmann::json to_json(const TranslationTriplet& t);
TranslationTriplet triplet_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PreferencePair& p);
PreferencePair pair_from_json(const nlohmann::json& j);

}  // namespace cpo::prefdata
