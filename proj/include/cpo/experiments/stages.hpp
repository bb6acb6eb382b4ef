#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpo/evalharness/evaluate.hpp"
#include "cpo/experiments/config.hpp"
#include "cpo/experiments/task.hpp"
#include "cpo/experiments/trainer.hpp"
#include "cpo/model/checkpoint.hpp"
#include "cpo/model/decoder.hpp"
#include "cpo/objectives/losses.hpp"
#include "cpo/prefdata/selection.hpp"

namespace cpo::experiments {

/// Splits "src-tgt" at the first '-'.
std::pair<std::string, std::string> split_direction(std::string_view label);

const model::PromptTemplate& prompt_template();

/// Prompt plus reference target of a corpus record.
model::TokenSequence training_sequence(const model::Vocabulary& vocab, const TaskRecord& record);
objectives::PreferenceItem preference_item(const model::Vocabulary& vocab, const prefdata::PreferencePair& pair);

/// Mean −log π(reference | prompt) over records.
double mean_nll(const model::Policy& policy, const model::Vocabulary& vocab, std::span<const TaskRecord> records);

/// SHA-256 over the raw values of every base tensor, in name order.
std::string weights_sha256(const model::ModelParams& params);

struct SftResult {
  model::Checkpoint checkpoint;
  double dev_nll_before = 0;
  double dev_nll_after = 0;
  TrainResult train;
};

/// Trains a fresh model on source → reference. `steps_limit` caps the number
/// of optimizer steps (0 runs none), mainly for tests.
SftResult pretrain_sft(const RunConfig& config, std::span<const TaskRecord> train, std::span<const TaskRecord> dev,
                       std::optional<std::uint64_t> steps_limit = std::nullopt);

struct PreferenceBuild {
  std::vector<prefdata::TranslationTriplet> triplets;
  prefdata::Dataset dataset;
  std::size_t decode_failures = 0;
};

/// Candidates per record: the reference (reference), the oracle (system_a)
/// and a temperature sample of the model (system_b). Samples that emit a
/// reserved token or nothing at all count as decode failures and drop the
/// record. Triplets are scored with `scorers` and selected with `filter`.
PreferenceBuild build_preferences_from_model(const model::Checkpoint& checkpoint, const Task& task,
                                             std::span<const TaskRecord> records, const prefdata::ScorerSpec& scorers,
                                             double temperature, const prefdata::SourceFilter& filter,
                                             std::uint64_t seed, std::size_t max_new);

/// Rescores existing triplets (for the scorer ablation) and reselects.
PreferenceBuild rescore(std::span<const prefdata::TranslationTriplet> triplets, const Task& task,
                        const prefdata::ScorerSpec& scorers, const prefdata::SourceFilter& filter);

struct FinetuneResult {
  model::AdapterParams adapters;
  TrainResult train;
  std::string base_sha_before;
  std::string base_sha_after;
  std::uint64_t policy_forwards = 0;
  std::uint64_t reference_forwards = 0;
  std::uint64_t resident_models = 1;
  std::size_t pairs = 0;

  nlohmann::json summary() const;  // everything but the adapter weights
};

/// Trains fresh adapters on top of the frozen checkpoint base. Reference-based
/// variants use the unadapted base as their reference policy. Throws
/// Error("frozen-base") if the base weights change.
FinetuneResult finetune(const model::Checkpoint& checkpoint, std::span<const prefdata::PreferencePair> pairs,
                        const objectives::LossConfig& loss, const OptimizerConfig& optimizer,
                        const AdapterConfig& adapter, std::uint64_t seed,
                        std::optional<std::uint64_t> steps_limit = std::nullopt);

/// Greedy translations of every record.
evalharness::SystemOutputs decode_outputs(std::string system, const model::ModelParams& base,
                                          const model::AdapterParams* adapters, const model::Vocabulary& vocab,
                                          std::span<const TaskRecord> records, std::size_t max_new);

/// Reference texts as a system, for win ratios.
evalharness::SystemOutputs reference_outputs(std::span<const TaskRecord> records);

std::vector<evalharness::EvalExample> eval_examples(std::span<const TaskRecord> records);

}  // namespace cpo::experiments
