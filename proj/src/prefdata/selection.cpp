#include "cpo/prefdata/selection.hpp"

#include <cmath>
#include <cstdio>

#include "cpo/common/error.hpp"

namespace cpo::prefdata {

namespace {

bool allowed(const SourceFilter& filter, Provenance p) { return filter.empty() || filter.count(p) > 0; }

}  // namespace

std::optional<PreferencePair> select_pair(const TranslationTriplet& triplet, const SourceFilter& filter) {
  triplet.validate();
  if (!triplet.scores) throw Error("unscored", "triplet " + triplet.id + " has no scores");

  // Walking in priority order and replacing only on strict improvement makes
  // both ties resolve to the earliest provenance, whatever the stored order.
  std::optional<Provenance> best, worst;
  std::size_t considered = 0;
  for (Provenance p : kAllProvenances) {
    if (!allowed(filter, p)) continue;
    ++considered;
    const double s = triplet.score(p);
    if (!best || s > triplet.score(*best)) best = p;
    if (!worst || s < triplet.score(*worst)) worst = p;
  }
  if (considered < 2) {
    throw Error("config", "source filter leaves " + std::to_string(considered) + " candidate(s); need at least 2");
  }
  if (triplet.score(*best) == triplet.score(*worst)) return std::nullopt;

  PreferencePair pair;
  pair.id = triplet.id;
  pair.direction = triplet.direction;
  pair.source = triplet.source;
  pair.preferred = triplet.candidate(*best).text;
  pair.dispreferred = triplet.candidate(*worst).text;
  pair.prov_w = *best;
  pair.prov_l = *worst;
  pair.score_w = triplet.score(*best);
  pair.score_l = triplet.score(*worst);
  if (pair.preferred == pair.dispreferred) return std::nullopt;
  return pair;
}

Dataset build_dataset(std::span<const TranslationTriplet> triplets, const SourceFilter& filter) {
  Dataset d;
  d.stats.triplets = triplets.size();
  for (const auto& t : triplets) {
    auto pair = select_pair(t, filter);
    if (pair) {
      d.pairs.push_back(std::move(*pair));
    } else {
      // Distinguish the two skip reasons for the stats.
      double hi = -1, lo = 101;
      for (Provenance p : kAllProvenances) {
        if (!allowed(filter, p)) continue;
        hi = std::max(hi, t.score(p));
        lo = std::min(lo, t.score(p));
      }
      ++(hi == lo ? d.stats.skipped_ties : d.stats.skipped_identical);
    }
  }
  d.stats.pairs = d.pairs.size();
  return d;
}

std::string ProvenanceStats::render() const {
  std::string out;
  for (std::size_t i = 0; i < kProvenances; ++i) {
    if (i) out += " / ";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f%%", percent[i]);
    out += buf;
  }
  return out;
}

ProvenanceStats provenance_stats(std::span<const PreferencePair> pairs) {
  if (pairs.empty()) throw Error("empty", "provenance statistics need at least one pair");
  ProvenanceStats s;
  for (const auto& p : pairs) ++s.counts[static_cast<std::size_t>(p.prov_w)];
  s.total = pairs.size();
  for (std::size_t i = 0; i < kProvenances; ++i) {
    s.percent[i] = 100.0 * static_cast<double>(s.counts[i]) / static_cast<double>(s.total);
  }
  return s;
}

double win_ratio(std::span<const double> model_scores, std::span<const double> reference_scores) {
  if (model_scores.size() != reference_scores.size()) {
    throw Error("length-mismatch", "win ratio over " + std::to_string(model_scores.size()) + " model scores and " +
                                       std::to_string(reference_scores.size()) + " reference scores");
  }
  if (model_scores.empty()) throw Error("empty", "win ratio needs at least one score");
  std::size_t wins = 0;
  for (std::size_t i = 0; i < model_scores.size(); ++i) wins += model_scores[i] > reference_scores[i];
  return 100.0 * static_cast<double>(wins) / static_cast<double>(model_scores.size());
}

}  // namespace cpo::prefdata
