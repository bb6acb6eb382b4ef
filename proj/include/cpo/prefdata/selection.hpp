#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cpo/prefdata/types.hpp"

namespace cpo::prefdata {

/// Which provenances may take part in selection. Empty means all three.
using SourceFilter = std::set<Provenance>;

/// Highest-scoring candidate becomes preferred, lowest dis-preferred, the
/// middle one is dropped. Ties on either side go to the candidate earliest in
/// provenance order; a full tie, or equal texts on both sides, yields nothing.
/// Throws if the filter leaves fewer than two candidates.
std::optional<PreferencePair> select_pair(const TranslationTriplet& triplet, const SourceFilter& filter = {});

struct DatasetStats {
  std::size_t triplets = 0;
  std::size_t pairs = 0;
  std::size_t skipped_ties = 0;
  std::size_t skipped_identical = 0;
};

struct Dataset {
  std::vector<PreferencePair> pairs;
  DatasetStats stats;
};

/// Runs select_pair over scored triplets in input order.
Dataset build_dataset(std::span<const TranslationTriplet> triplets, const SourceFilter& filter = {});

struct ProvenanceStats {
  std::array<std::size_t, kProvenances> counts{};
  std::array<double, kProvenances> percent{};
  std::size_t total = 0;

  /// "46% / 37% / 17%" in provenance order, rounded to whole percents.
  std::string render() const;
};

/// Share of preferred-side wins by provenance. Rejects empty input.
ProvenanceStats provenance_stats(std::span<const PreferencePair> pairs);

/// 100 · #{i : model_i > reference_i} / n.
double win_ratio(std::span<const double> model_scores, std::span<const double> reference_scores);

}  // namespace cpo::prefdata
