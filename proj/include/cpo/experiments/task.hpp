#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpo/evalharness/evaluate.hpp"

namespace cpo::experiments {

enum class TaskKind { copy, reverse, rot_k, dict_swap };

std::string task_kind_name(TaskKind k);
TaskKind parse_task_kind(std::string_view name);

/// A synthetic translation task. Sentences are drawn from a lexicon of
/// random lowercase words; the oracle maps a sentence deterministically and
/// invertibly:
///   copy       identity
///   reverse    the characters in reverse order
///   rot_k      every letter shifted k places, case kept
///   dict_swap  each word looked up in a bijective dictionary of uppercase
///              words, then neighbours (0,1), (2,3), ... swapped
/// Direction 0 is the forward map, direction 1 (if listed) its inverse.
struct TaskSpec {
  TaskKind kind = TaskKind::dict_swap;
  std::size_t lexicon_size = 64;
  std::size_t min_word_len = 2;
  std::size_t max_word_len = 4;
  std::size_t min_words = 4;
  std::size_t max_words = 10;
  int rot_k = 3;
  std::vector<std::pair<std::string, std::string>> directions{{"en", "xx"}};
  double reference_deletion = 0.1;  // per-word deletion rate of the references
  std::uint64_t lexicon_seed = 7;   // fixes the lexicon and dictionary

  std::size_t train = 4000;
  std::size_t dev = 500;
  std::size_t test = 500;

  void validate() const;
  /// Longest possible source or target text in characters.
  std::size_t max_text_chars() const;
};

void to_json(nlohmann::json& j, const TaskSpec& t);
void from_json(const nlohmann::json& j, TaskSpec& t);

/// Lexicon, dictionary and oracle of one TaskSpec.
class Task {
 public:
  explicit Task(TaskSpec spec);

  const TaskSpec& spec() const { return spec_; }
  const std::vector<std::string>& lexicon() const { return lexicon_; }
  /// Direction label "src-tgt" of direction index d.
  std::string direction_label(std::size_t d) const;
  std::size_t direction_index(std::string_view label) const;

  std::string forward(std::string_view sentence) const;
  std::string inverse(std::string_view sentence) const;
  /// Oracle translation of `source` in direction d.
  std::string oracle(std::string_view source, std::size_t direction) const;
  std::string oracle(std::string_view source, std::string_view direction_label) const;

 private:
  TaskSpec spec_;
  std::vector<std::string> lexicon_;
  std::vector<std::string> targets_;  // dict_swap dictionary, aligned with lexicon_
};

struct TaskRecord {
  std::string id;
  std::string direction;  // "src-tgt"
  std::string source;
  std::string oracle;
  std::string reference;  // oracle with word deletions at reference_deletion
};

nlohmann::json to_json(const TaskRecord& r);
TaskRecord task_record_from_json(const nlohmann::json& j);
evalharness::EvalExample eval_example(const TaskRecord& r);

struct Corpus {
  std::vector<TaskRecord> train, dev, test;
};

/// Draws train + dev + test distinct source sentences (so the splits never
/// share a source), cycling through the directions. Deterministic in seed.
Corpus generate_corpus(const Task& task, std::uint64_t seed);

/// Records for an arbitrary count, used by tests and small tools.
std::vector<TaskRecord> generate_records(const Task& task, std::size_t n, std::uint64_t seed,
                                         const std::string& id_prefix = "r");

}  // namespace cpo::experiments
