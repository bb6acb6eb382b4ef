#include "cpo/prefdata/scorers.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "cpo/common/error.hpp"

namespace cpo::prefdata {

namespace {

std::vector<std::string_view> split_words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::map<std::string_view, std::size_t> ngrams(std::string_view s, std::size_t n) {
  std::map<std::string_view, std::size_t> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[s.substr(i, n)];
  return out;
}

std::string strip_spaces(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c != ' ') out.push_back(c);
  }
  return out;
}

}  // namespace

std::size_t word_edit_distance(std::string_view a, std::string_view b) {
  const auto x = split_words(a), y = split_words(b);
  std::vector<std::size_t> row(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (x[i - 1] == y[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[y.size()];
}

double oracle_similarity(std::string_view candidate, std::string_view oracle) {
  const std::size_t longest = std::max(split_words(candidate).size(), split_words(oracle).size());
  if (longest == 0) return 100.0;
  return 100.0 * (1.0 - static_cast<double>(word_edit_distance(candidate, oracle)) / static_cast<double>(longest));
}

double chrf(std::string_view candidate, std::string_view reference) {
  const std::string c = strip_spaces(candidate), r = strip_spaces(reference);
  if (c.empty() && r.empty()) return 100.0;
  if (c.empty() || r.empty()) return 0.0;
  double p_sum = 0, r_sum = 0;
  int orders = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cg = ngrams(c, n), rg = ngrams(r, n);
    std::size_t c_total = 0, r_total = 0, match = 0;
    for (const auto& [g, k] : cg) {
      c_total += k;
      if (auto it = rg.find(g); it != rg.end()) match += std::min(k, it->second);
    }
    for (const auto& [g, k] : rg) r_total += k;
    if (c_total == 0 || r_total == 0) continue;
    p_sum += static_cast<double>(match) / static_cast<double>(c_total);
    r_sum += static_cast<double>(match) / static_cast<double>(r_total);
    ++orders;
  }
  if (orders == 0) return c == r ? 100.0 : 0.0;
  const double p = p_sum / orders, rc = r_sum / orders;
  if (p + rc == 0) return 0.0;
  constexpr double kBeta2 = 4.0;
  return 100.0 * (1 + kBeta2) * p * rc / (kBeta2 * p + rc);
}

ScorerRegistry ScorerRegistry::builtin() {
  ScorerRegistry r;
  r.add("oracle-sim", [](std::string_view cand, const ScoringContext& ctx) { return oracle_similarity(cand, ctx.oracle); });
  r.add("chrf", [](std::string_view cand, const ScoringContext& ctx) { return chrf(cand, ctx.oracle); });
  return r;
}

void ScorerRegistry::add(std::string id, ScorerFn fn) { scorers_[std::move(id)] = std::move(fn); }

bool ScorerRegistry::contains(std::string_view id) const { return scorers_.find(id) != scorers_.end(); }

const ScorerFn& ScorerRegistry::get(std::string_view id) const {
  const auto it = scorers_.find(id);
  if (it == scorers_.end()) throw Error("unknown-scorer", "unknown scorer '" + std::string(id) + "'");
  return it->second;
}

std::vector<std::string> ScorerRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, fn] : scorers_) out.push_back(id);
  return out;
}

void ScorerSpec::validate(const ScorerRegistry& registry) const {
  if (scorers.empty()) throw Error("config", "scorer spec is empty");
  for (const auto& id : scorers) registry.get(id);
}

double ScorerSpec::score(const ScorerRegistry& registry, std::string_view candidate,
                         const ScoringContext& context) const {
  validate(registry);
  double sum = 0;
  for (const auto& id : scorers) {
    const double s = registry.get(id)(candidate, context);
    if (!(s >= 0 && s <= 100)) throw Error("scorer", "scorer '" + id + "' returned " + std::to_string(s));
    sum += s;
  }
  return sum / static_cast<double>(scorers.size());
}

ScorerSpec parse_scorer_spec(std::string_view list) {
  ScorerSpec spec;
  spec.scorers.clear();
  std::stringstream in{std::string(list)};
  std::string id;
  while (std::getline(in, id, ',')) {
    if (!id.empty()) spec.scorers.push_back(id);
  }
  if (spec.scorers.empty()) throw Error("config", "scorer spec is empty");
  return spec;
}

TranslationTriplet score_triplet(TranslationTriplet triplet, const ScorerSpec& spec, const ScorerRegistry& registry,
                                 const OracleFn& oracle) {
  spec.validate(registry);
  const std::string reference = oracle(triplet.source);
  const ScoringContext ctx{triplet.source, reference};
  std::array<double, 3> scores{};
  for (std::size_t i = 0; i < 3; ++i) scores[i] = spec.score(registry, triplet.candidates[i].text, ctx);
  triplet.scores = scores;
  return triplet;
}

}  // namespace cpo::prefdata
