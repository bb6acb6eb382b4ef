#include "cpo/experiments/task.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>
#include <unordered_set>

#include "cpo/common/error.hpp"
#include "cpo/common/jsonl.hpp"
#include "cpo/prefdata/noise.hpp"

namespace cpo::experiments {

namespace {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < text.size() && text[i] != ' ') ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

void swap_neighbours(std::vector<std::string>& words) {
  for (std::size_t i = 0; i + 1 < words.size(); i += 2) std::swap(words[i], words[i + 1]);
}

std::string rotate(std::string_view text, int k) {
  const int shift = ((k % 26) + 26) % 26;
  std::string out(text);
  for (char& c : out) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>('a' + (c - 'a' + shift) % 26);
    else if (c >= 'A' && c <= 'Z') c = static_cast<char>('A' + (c - 'A' + shift) % 26);
  }
  return out;
}

std::vector<std::string> random_words(std::mt19937_64& rng, std::size_t count, std::size_t min_len,
                                      std::size_t max_len, char base, const std::set<std::string>& avoid = {}) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<int> letter(0, 25);
  std::set<std::string> seen(avoid);
  std::vector<std::string> out;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (++attempts > count * 1000) throw Error("config", "cannot draw enough distinct lexicon words");
    std::string w(len(rng), ' ');
    for (char& c : w) c = static_cast<char>(base + letter(rng));
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

std::string task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::rot_k: return "rot_k";
    case TaskKind::dict_swap: return "dict_swap";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  if (name == "rot_k" || name == "rot-k") return TaskKind::rot_k;
  if (name == "dict_swap" || name == "dict-swap") return TaskKind::dict_swap;
  throw Error("config", "unknown task kind '" + std::string(name) + "'");
}

void TaskSpec::validate() const {
  if (lexicon_size < 2) throw Error("config", "task.lexicon_size must be at least 2");
  if (min_word_len < 1 || min_word_len > max_word_len) throw Error("config", "task word length range is empty");
  if (min_words < 1 || min_words > max_words) throw Error("config", "task sentence length range is empty");
  if (directions.empty() || directions.size() > 2) throw Error("config", "task.directions must list one or two directions");
  for (const auto& [s, t] : directions) {
    if (s.empty() || t.empty()) throw Error("config", "task direction labels must be nonempty");
  }
  if (!(reference_deletion >= 0 && reference_deletion < 1)) {
    throw Error("config", "task.reference_deletion must lie in [0, 1)");
  }
  if (train + dev + test == 0) throw Error("config", "task splits are all empty");
}

std::size_t TaskSpec::max_text_chars() const {
  // dict_swap targets draw from the same length range as the sources.
  return max_words * (max_word_len + 1) - 1;
}

void to_json(nlohmann::json& j, const TaskSpec& t) {
  nlohmann::json dirs = nlohmann::json::array();
  for (const auto& [s, g] : t.directions) dirs.push_back({s, g});
  j = {{"kind", task_kind_name(t.kind)},
       {"lexicon_size", t.lexicon_size},
       {"min_word_len", t.min_word_len},
       {"max_word_len", t.max_word_len},
       {"min_words", t.min_words},
       {"max_words", t.max_words},
       {"rot_k", t.rot_k},
       {"directions", dirs},
       {"reference_deletion", t.reference_deletion},
       {"lexicon_seed", t.lexicon_seed},
       {"train", t.train},
       {"dev", t.dev},
       {"test", t.test}};
}

void from_json(const nlohmann::json& j, TaskSpec& t) {
  static const std::set<std::string> known{"kind",      "lexicon_size", "min_word_len",       "max_word_len", "min_words",
                                           "max_words", "rot_k",        "directions",         "reference_deletion",
                                           "lexicon_seed", "train",     "dev",                "test"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error("config", "task: unknown field '" + key + "'");
  }
  TaskSpec d;
  t.kind = parse_task_kind(j.value("kind", task_kind_name(d.kind)));
  t.lexicon_size = j.value("lexicon_size", d.lexicon_size);
  t.min_word_len = j.value("min_word_len", d.min_word_len);
  t.max_word_len = j.value("max_word_len", d.max_word_len);
  t.min_words = j.value("min_words", d.min_words);
  t.max_words = j.value("max_words", d.max_words);
  t.rot_k = j.value("rot_k", d.rot_k);
  if (j.contains("directions")) {
    t.directions.clear();
    for (const auto& p : j.at("directions")) t.directions.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  } else {
    t.directions = d.directions;
  }
  t.reference_deletion = j.value("reference_deletion", d.reference_deletion);
  t.lexicon_seed = j.value("lexicon_seed", d.lexicon_seed);
  t.train = j.value("train", d.train);
  t.dev = j.value("dev", d.dev);
  t.test = j.value("test", d.test);
}

Task::Task(TaskSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::mt19937_64 rng(spec_.lexicon_seed);
  lexicon_ = random_words(rng, spec_.lexicon_size, spec_.min_word_len, spec_.max_word_len, 'a');
  if (spec_.kind == TaskKind::dict_swap) {
    targets_ = random_words(rng, spec_.lexicon_size, spec_.min_word_len, spec_.max_word_len, 'A');
  }
}

std::string Task::direction_label(std::size_t d) const {
  const auto& [s, t] = spec_.directions.at(d);
  return s + "-" + t;
}

std::size_t Task::direction_index(std::string_view label) const {
  for (std::size_t d = 0; d < spec_.directions.size(); ++d) {
    if (direction_label(d) == label) return d;
  }
  throw Error("schema", "unknown direction '" + std::string(label) + "'");
}

std::string Task::forward(std::string_view sentence) const {
  switch (spec_.kind) {
    case TaskKind::copy: return std::string(sentence);
    case TaskKind::reverse: return std::string(sentence.rbegin(), sentence.rend());
    case TaskKind::rot_k: return rotate(sentence, spec_.rot_k);
    case TaskKind::dict_swap: {
      auto words = split_words(sentence);
      for (auto& w : words) {
        const auto it = std::find(lexicon_.begin(), lexicon_.end(), w);
        if (it == lexicon_.end()) throw Error("schema", "word '" + w + "' is not in the lexicon");
        w = targets_[static_cast<std::size_t>(it - lexicon_.begin())];
      }
      swap_neighbours(words);
      return join_words(words);
    }
  }
  return {};
}

std::string Task::inverse(std::string_view sentence) const {
  switch (spec_.kind) {
    case TaskKind::copy:
    case TaskKind::reverse: return forward(sentence);
    case TaskKind::rot_k: return rotate(sentence, -spec_.rot_k);
    case TaskKind::dict_swap: {
      auto words = split_words(sentence);
      swap_neighbours(words);
      for (auto& w : words) {
        const auto it = std::find(targets_.begin(), targets_.end(), w);
        if (it == targets_.end()) throw Error("schema", "word '" + w + "' is not in the target lexicon");
        w = lexicon_[static_cast<std::size_t>(it - targets_.begin())];
      }
      return join_words(words);
    }
  }
  return {};
}

std::string Task::oracle(std::string_view source, std::size_t direction) const {
  if (direction >= spec_.directions.size()) throw Error("schema", "direction index out of range");
  return direction == 0 ? forward(source) : inverse(source);
}

std::string Task::oracle(std::string_view source, std::string_view label) const {
  return oracle(source, direction_index(label));
}

nlohmann::json to_json(const TaskRecord& r) {
  return {{"id", r.id}, {"direction", r.direction}, {"source", r.source}, {"oracle", r.oracle}, {"reference", r.reference}};
}

TaskRecord task_record_from_json(const nlohmann::json& j) {
  return {require_string(j, "id"), require_string(j, "direction"), require_string(j, "source"),
          require_string(j, "oracle"), require_string(j, "reference")};
}

evalharness::EvalExample eval_example(const TaskRecord& r) { return {r.id, r.direction, r.source, r.oracle}; }

namespace {

struct Sampler {
  const Task& task;
  std::mt19937_64 rng;
  std::unordered_set<std::string> used;
  std::size_t next_direction = 0;

  std::string sentence() {
    const auto& s = task.spec();
    std::uniform_int_distribution<std::size_t> len(s.min_words, s.max_words);
    std::uniform_int_distribution<std::size_t> word(0, task.lexicon().size() - 1);
    std::vector<std::string> words(len(rng));
    for (auto& w : words) w = task.lexicon()[word(rng)];
    return join_words(words);
  }

  TaskRecord draw(const std::string& id) {
    std::string base;
    for (std::size_t attempts = 0;; ++attempts) {
      if (attempts > 100000) throw Error("config", "cannot draw enough distinct sentences for the requested splits");
      base = sentence();
      if (used.insert(base).second) break;
    }
    const std::size_t d = next_direction++ % task.spec().directions.size();
    TaskRecord r;
    r.id = id;
    r.direction = task.direction_label(d);
    r.source = d == 0 ? base : task.forward(base);
    r.oracle = d == 0 ? task.forward(base) : base;
    const double rho = task.spec().reference_deletion;
    r.reference = rho == 0 ? r.oracle : prefdata::noise_text(r.oracle, {rho, 0.0}, rng);
    return r;
  }
};

}  // namespace

std::vector<TaskRecord> generate_records(const Task& task, std::size_t n, std::uint64_t seed, const std::string& id_prefix) {
  if (n == 0) throw Error("config", "record count must be at least 1");
  Sampler s{task, std::mt19937_64(seed), {}, 0};
  std::vector<TaskRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(s.draw(id_prefix + std::to_string(i)));
  return out;
}

Corpus generate_corpus(const Task& task, std::uint64_t seed) {
  const auto& spec = task.spec();
  Sampler s{task, std::mt19937_64(seed), {}, 0};
  Corpus c;
  for (std::size_t i = 0; i < spec.train; ++i) c.train.push_back(s.draw("train-" + std::to_string(i)));
  for (std::size_t i = 0; i < spec.dev; ++i) c.dev.push_back(s.draw("dev-" + std::to_string(i)));
  for (std::size_t i = 0; i < spec.test; ++i) c.test.push_back(s.draw("test-" + std::to_string(i)));
  return c;
}

}  // namespace cpo::experiments
