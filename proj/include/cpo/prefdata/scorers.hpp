#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cpo/prefdata/types.hpp"

namespace cpo::prefdata {

/// What a scorer may look at besides the candidate: the source and the
/// output of the task oracle, which stands in for an ideal translator.
struct ScoringContext {
  std::string_view source;
  std::string_view oracle;
};

/// Returns a quality score in [0, 100].
using ScorerFn = std::function<double(std::string_view candidate, const ScoringContext& context)>;

/// Built-in scorers:
///   oracle-sim  100 · (1 − word-level edit distance / longer word count)
///   chrf        character n-gram F-score (n = 1..4, recall-weighted β = 2)
class ScorerRegistry {
 public:
  static ScorerRegistry builtin();

  void add(std::string id, ScorerFn fn);
  bool contains(std::string_view id) const;
  const ScorerFn& get(std::string_view id) const;
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, ScorerFn, std::less<>> scorers_;
};

/// A nonempty set of scorer ids; a candidate's score is their arithmetic mean.
struct ScorerSpec {
  std::vector<std::string> scorers{"oracle-sim", "chrf"};

  void validate(const ScorerRegistry& registry) const;
  double score(const ScorerRegistry& registry, std::string_view candidate, const ScoringContext& context) const;
};

/// Parses "a,b" into a spec.
ScorerSpec parse_scorer_spec(std::string_view list);

std::size_t word_edit_distance(std::string_view a, std::string_view b);
double oracle_similarity(std::string_view candidate, std::string_view oracle);
double chrf(std::string_view candidate, std::string_view reference);

/// Maps a source sentence to the oracle translation.
using OracleFn = std::function<std::string(std::string_view source)>;

/// Fills in the scores of a triplet; deterministic.
TranslationTriplet score_triplet(TranslationTriplet triplet, const ScorerSpec& spec, const ScorerRegistry& registry,
                                 const OracleFn& oracle);

}  // namespace cpo::prefdata
