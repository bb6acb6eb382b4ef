#include "cpo/prefdata/noise.hpp"

#include <cctype>
#include <utility>

#include "cpo/common/error.hpp"

namespace cpo::prefdata {

void NoiseOptions::validate() const {
  if (!(p_delete >= 0 && p_delete <= 1)) throw Error("config", "p_delete must lie in [0, 1]");
  if (!(p_swap >= 0 && p_swap <= 1)) throw Error("config", "p_swap must lie in [0, 1]");
}

std::string noise_text(std::string_view text, const NoiseOptions& options, std::mt19937_64& rng, NoiseTrace* trace) {
  options.validate();
  std::vector<std::string_view> words;
  for (std::size_t i = 0; i < text.size();) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }

  std::bernoulli_distribution drop(options.p_delete), swap(options.p_swap);
  std::vector<std::string_view> kept;
  for (auto w : words) {
    if (!drop(rng)) kept.push_back(w);
  }
  if (kept.empty() && !words.empty()) kept.push_back(words.front());
  NoiseTrace t{words.size() - kept.size(), 0};

  for (std::size_t i = 0; i + 1 < kept.size(); ++i) {
    if (swap(rng)) {
      std::swap(kept[i], kept[i + 1]);
      ++t.swapped;
    }
  }
  if (trace) *trace = t;
  if (t.deleted == 0 && t.swapped == 0) return std::string(text);

  std::string out;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i) out.push_back(' ');
    out.append(kept[i]);
  }
  return out;
}

std::vector<PreferencePair> noise_dispreferred(std::span<const PreferencePair> pairs, const NoiseOptions& options,
                                               std::uint64_t seed) {
  options.validate();
  std::mt19937_64 rng(seed);
  std::vector<PreferencePair> out(pairs.begin(), pairs.end());
  for (auto& p : out) p.dispreferred = noise_text(p.preferred, options, rng);
  return out;
}

}  // namespace cpo::prefdata
