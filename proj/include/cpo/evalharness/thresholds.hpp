#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cpo::evalharness {

/// Minimum metric deltas at which a difference agrees with human pairwise
/// judgments at a given rate. A missing cell means that accuracy is out of
/// reach for the metric.
class ThresholdTable {
 public:
  /// The table for BLEU, Comet-22, KIWI-22, XCOMET-XXL and KIWI-XXL, with the
  /// desk-scale scorers aliased to the closest published metric
  /// (oracle-sim → KIWI-XXL, chrf → BLEU).
  static ThresholdTable builtin();
  static ThresholdTable from_json(const nlohmann::json& j);
  static ThresholdTable load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<int>& accuracies() const { return accuracies_; }
  std::vector<std::string> metrics() const;
  /// Follows aliases; throws for unknown names.
  const std::string& resolve(std::string_view metric) const;
  const std::vector<std::optional<double>>& row(std::string_view metric) const;
  std::optional<double> threshold(std::string_view metric, int accuracy) const;

  /// Highest accuracy whose threshold is ≤ delta; nullopt below the first
  /// threshold ("below chance").
  std::optional<int> accuracy_band(std::string_view metric, double delta) const;

  bool operator==(const ThresholdTable&) const = default;

 private:
  void validate() const;

  std::vector<int> accuracies_;
  std::map<std::string, std::vector<std::optional<double>>, std::less<>> rows_;
  std::map<std::string, std::string, std::less<>> aliases_;
};

}  // namespace cpo::evalharness
