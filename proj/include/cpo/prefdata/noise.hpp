#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpo/prefdata/types.hpp"

namespace cpo::prefdata {

struct NoiseOptions {
  double p_delete = 0.15;
  double p_swap = 0.3;

  void validate() const;
};

struct NoiseTrace {
  std::size_t deleted = 0;
  std::size_t swapped = 0;
};

/// Splits on whitespace, drops each word with p_delete (keeping the first if
/// every word would go), then walks left to right swapping words i and i+1
/// with p_swap. Words are rejoined with single spaces; untouched text is
/// returned verbatim.
std::string noise_text(std::string_view text, const NoiseOptions& options, std::mt19937_64& rng,
                       NoiseTrace* trace = nullptr);

/// Replaces each pair's dis-preferred side with a noised copy of its preferred
/// side. The dis-preferred provenance and score are left as they were.
std::vector<PreferencePair> noise_dispreferred(std::span<const PreferencePair> pairs, const NoiseOptions& options,
                                               std::uint64_t seed);

}  // namespace cpo::prefdata
