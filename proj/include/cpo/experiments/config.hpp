#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpo/experiments/task.hpp"
#include "cpo/model/transformer.hpp"
#include "cpo/objectives/losses.hpp"
#include "cpo/prefdata/noise.hpp"
#include "cpo/prefdata/scorers.hpp"
#include "cpo/prefdata/selection.hpp"

namespace cpo::experiments {

/// Adam with linear warmup over warmup_ratio of the steps, then linear decay
/// to zero, and global-norm gradient clipping.
struct OptimizerConfig {
  double lr = 3e-4;
  std::size_t batch_size = 32;
  double warmup_ratio = 0.01;
  std::size_t epochs = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // 0 disables clipping

  void validate(const char* where) const;
};

struct AdapterConfig {
  std::size_t rank = 16;
  double alpha = 32.0;
};

struct PreferenceConfig {
  prefdata::ScorerSpec scorers;
  double temperature = 0.8;  // sampling temperature of the SFT candidate
  std::vector<std::string> source_filter;  // provenance names; empty = all
};

struct EvalConfig {
  std::string metric = "oracle-sim";  // headline metric for directional checks
  std::vector<std::string> metrics{"oracle-sim", "chrf"};
  std::size_t max_new = 64;
};

inline const std::vector<std::string> kAblationKinds{"loss-components", "data-components", "scorer-choice",
                                                     "noised-dispreferred"};

struct RunConfig {
  TaskSpec task;
  model::TransformerConfig model;  // vocab_size 0 means "fit the vocabulary"
  AdapterConfig adapter;
  objectives::LossConfig loss;  // beta and lambda shared by every variant
  OptimizerConfig sft{2e-3, 32, 0.01, 6};
  OptimizerConfig finetune{3e-4, 32, 0.01, 1};
  PreferenceConfig preferences;
  prefdata::NoiseOptions noise;
  EvalConfig eval;
  std::vector<std::string> variants{"sft", "dpo", "cpo"};
  std::vector<std::string> ablations{"noised-dispreferred"};
  std::uint64_t seed = 0;
  std::string run_dir = "runs/default";

  /// Throws Error("config") naming the offending field.
  void validate() const;
  prefdata::SourceFilter source_filter() const;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing fields keep their defaults; unknown top-level fields are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace cpo::experiments
