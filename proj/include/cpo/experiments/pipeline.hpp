#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpo/evalharness/evaluate.hpp"
#include "cpo/evalharness/thresholds.hpp"
#include "cpo/experiments/config.hpp"
#include "cpo/experiments/stages.hpp"
#include "cpo/experiments/task.hpp"

namespace cpo::experiments {

inline constexpr const char* kBaseSystem = "sft-base";
inline constexpr const char* kReferenceSystem = "reference";

struct PipelineOptions {
  bool dry_run = false;
  std::ostream* log = nullptr;
  // Step caps for smoke runs; unset means the configured epochs.
  std::optional<std::uint64_t> sft_steps;
  std::optional<std::uint64_t> finetune_steps;
  std::optional<std::filesystem::path> thresholds;  // default: built-in table
};

/// State shared by the stages of one run directory. Fine-tuned systems are
/// cached by variant, loss settings and a hash of their pairs, so ablations
/// that repeat a configuration reuse it.
class Experiment {
 public:
  Experiment(RunConfig config, PipelineOptions options = {});

  /// Reopens a run directory produced by the pretrain and build-preferences
  /// stages of an earlier run.
  static Experiment open(const std::filesystem::path& run_dir, PipelineOptions options = {});

  const RunConfig& config() const { return config_; }
  const Task& task() const { return task_; }
  const Corpus& corpus() const { return corpus_; }
  const model::Checkpoint& sft() const { return sft_; }
  const PreferenceBuild& preferences() const { return prefs_; }
  std::filesystem::path run_dir() const { return config_.run_dir; }
  const nlohmann::json& manifest() const { return manifest_; }
  const std::vector<std::filesystem::path>& written() const { return written_; }

  void generate();
  void pretrain();
  void build_preferences();

  /// Fine-tunes (or reuses) a system and scores it on the test split.
  const evalharness::SystemScores& finetuned(const std::string& system, objectives::Variant variant,
                                             const std::vector<prefdata::PreferencePair>& pairs);
  const evalharness::SystemScores& base_scores();
  const evalharness::SystemScores& reference_scores();

  evalharness::MetricReport main_report();
  evalharness::MetricReport ablation(const std::string& kind);

  /// Runs `body` as a named stage: timing and completion go to the manifest,
  /// and a failure is rethrown naming the stage after the manifest is saved.
  void stage(const std::string& name, const std::function<void()>& body);

  void write_manifest(const std::string& status);
  void write_report(const std::string& name, const evalharness::MetricReport& report);

 private:
  evalharness::SystemScores score_outputs(const evalharness::SystemOutputs& outputs) const;
  evalharness::MetricReport report_of(const std::vector<std::string>& systems) const;
  std::filesystem::path path(const std::string& relative) const;
  void write_dataset(const std::string& name, const std::vector<nlohmann::json>& records);
  void log(const std::string& line) const;

  RunConfig config_;
  PipelineOptions options_;
  Task task_;
  Corpus corpus_;
  model::Checkpoint sft_;
  PreferenceBuild prefs_;
  evalharness::ThresholdTable thresholds_;
  std::map<std::string, evalharness::SystemScores> scores_;
  std::map<std::string, std::string> finetune_keys_;  // cache key → system name
  nlohmann::json manifest_;
  std::vector<std::filesystem::path> written_;
  std::chrono::steady_clock::time_point started_;
};

/// Stage names in execution order.
std::vector<std::string> stage_plan(const RunConfig& config);

struct PipelineResult {
  std::vector<std::string> plan;
  std::optional<evalharness::MetricReport> report;
  std::map<std::string, evalharness::MetricReport> ablations;
  nlohmann::json manifest;
  std::vector<std::filesystem::path> written;
};

/// generate → pretrain → build preferences → fine-tune every variant →
/// evaluate → report, then the configured ablations. With dry_run only the
/// config is validated and the plan returned; nothing is written.
PipelineResult run_pipeline(const RunConfig& config, const PipelineOptions& options = {});

/// Display name of a configured variant, e.g. "sft" → "sft-preferred".
std::string system_name(const std::string& variant);

}  // namespace cpo::experiments
