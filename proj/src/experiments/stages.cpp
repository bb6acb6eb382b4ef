#include "cpo/experiments/stages.hpp"

#include <algorithm>

#include "cpo/common/error.hpp"
#include "cpo/common/hash.hpp"
#include "cpo/experiments/seeds.hpp"

namespace cpo::experiments {

using model::Vocabulary;

std::pair<std::string, std::string> split_direction(std::string_view label) {
  const auto dash = label.find('-');
  if (dash == std::string_view::npos || dash == 0 || dash + 1 == label.size()) {
    throw Error("schema", "direction '" + std::string(label) + "' is not of the form src-tgt");
  }
  return {std::string(label.substr(0, dash)), std::string(label.substr(dash + 1))};
}

const model::PromptTemplate& prompt_template() {
  static const model::PromptTemplate t;
  return t;
}

namespace {

model::TokenSequence render_prompt(const Vocabulary& vocab, std::string_view direction, std::string_view source) {
  const auto [src, tgt] = split_direction(direction);
  return prompt_template().render(vocab, src, tgt, source);
}

void adopt_vocab_size(model::TransformerConfig& config, const Vocabulary& vocab) {
  if (config.vocab_size == 0) config.vocab_size = vocab.size();
  if (config.vocab_size != vocab.size()) {
    throw Error("config", "model.vocab_size " + std::to_string(config.vocab_size) + " does not match the vocabulary (" +
                              std::to_string(vocab.size()) + ")");
  }
}

}  // namespace

model::TokenSequence training_sequence(const Vocabulary& vocab, const TaskRecord& record) {
  return model::join(render_prompt(vocab, record.direction, record.source), vocab.encode_target(record.reference));
}

objectives::PreferenceItem preference_item(const Vocabulary& vocab, const prefdata::PreferencePair& pair) {
  return {render_prompt(vocab, pair.direction, pair.source), vocab.encode_target(pair.preferred),
          vocab.encode_target(pair.dispreferred)};
}

double mean_nll(const model::Policy& policy, const Vocabulary& vocab, std::span<const TaskRecord> records) {
  if (records.empty()) return 0;
  double total = 0;
  for (const auto& r : records) total -= model::sequence_logprob_value(policy, training_sequence(vocab, r));
  return total / static_cast<double>(records.size());
}

std::string weights_sha256(const model::ModelParams& params) {
  std::vector<unsigned char> bytes;
  for (const auto& [name, t] : params.named()) {
    bytes.insert(bytes.end(), name.begin(), name.end());
    const auto v = t.values();
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

SftResult pretrain_sft(const RunConfig& config, std::span<const TaskRecord> train_records,
                       std::span<const TaskRecord> dev, std::optional<std::uint64_t> steps_limit) {
  if (train_records.empty()) throw Error("config", "SFT needs at least one training record");
  const Vocabulary vocab = Vocabulary::default_charset();
  auto mc = config.model;
  adopt_vocab_size(mc, vocab);

  SftResult out;
  out.checkpoint.vocabulary = vocab;
  out.checkpoint.seed = config.seed;
  out.checkpoint.base = model::ModelParams::init(mc, derive_seed(config.seed, "sft-init"));
  auto& base = out.checkpoint.base;

  std::vector<model::TokenSequence> sequences;
  sequences.reserve(train_records.size());
  for (const auto& r : train_records) sequences.push_back(training_sequence(vocab, r));

  const model::Policy policy(base);
  out.dev_nll_before = mean_nll(policy, vocab, dev);

  std::vector<Tensor> params;
  for (auto& [name, t] : base.named()) params.push_back(t);
  out.train = train(
      params, sequences.size(), config.sft, derive_seed(config.seed, "sft-shuffle"),
      [&](Tape& tape, std::span<const std::size_t> idx) {
        std::vector<model::TokenSequence> batch;
        batch.reserve(idx.size());
        for (auto i : idx) batch.push_back(sequences[i]);
        BatchLoss loss;
        loss.total = objectives::nll_loss(tape, policy, std::span<const model::TokenSequence>(batch));
        loss.nll_term = loss.total.item();
        return loss;
      },
      steps_limit);

  out.dev_nll_after = mean_nll(policy, vocab, dev);
  out.checkpoint.steps = out.train.steps;
  base.set_frozen(true);
  out.checkpoint.extra = {{"stage", "sft"}, {"dev_nll_before", out.dev_nll_before}, {"dev_nll_after", out.dev_nll_after}};
  return out;
}

namespace {

std::optional<std::string> sample_candidate(const model::Decoder& decoder, const Vocabulary& vocab,
                                            const TaskRecord& r, double temperature, std::uint64_t seed,
                                            std::size_t max_new) {
  const auto prompt = render_prompt(vocab, r.direction, r.source);
  model::DecodeOptions opts;
  opts.mode = model::DecodeMode::sample;
  opts.temperature = temperature;
  opts.seed = seed;
  opts.max_new = max_new;
  const auto ids = decoder.generate(prompt.ids, opts);
  if (ids.empty()) return std::nullopt;
  for (int id : ids) {
    if (id < Vocabulary::kReserved) return std::nullopt;
  }
  return vocab.detokenize(ids);
}

prefdata::OracleFn oracle_of(const Task& task, const std::string& direction) {
  return [&task, direction](std::string_view source) { return task.oracle(source, direction); };
}

}  // namespace

PreferenceBuild build_preferences_from_model(const model::Checkpoint& checkpoint, const Task& task,
                                             std::span<const TaskRecord> records, const prefdata::ScorerSpec& scorers,
                                             double temperature, const prefdata::SourceFilter& filter,
                                             std::uint64_t seed, std::size_t max_new) {
  const auto registry = prefdata::ScorerRegistry::builtin();
  scorers.validate(registry);
  const model::Decoder decoder(checkpoint.base, checkpoint.adapters ? &*checkpoint.adapters : nullptr);

  PreferenceBuild out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto sample = sample_candidate(decoder, checkpoint.vocabulary, r, temperature, derive_seed(seed, i), max_new);
    if (!sample) {
      ++out.decode_failures;
      continue;
    }
    prefdata::TranslationTriplet t;
    t.id = r.id;
    t.direction = r.direction;
    t.source = r.source;
    t.candidates = {prefdata::Candidate{r.reference, prefdata::Provenance::reference},
                    prefdata::Candidate{r.oracle, prefdata::Provenance::system_a},
                    prefdata::Candidate{*sample, prefdata::Provenance::system_b}};
    out.triplets.push_back(prefdata::score_triplet(std::move(t), scorers, registry, oracle_of(task, r.direction)));
  }
  out.dataset = prefdata::build_dataset(out.triplets, filter);
  return out;
}

PreferenceBuild rescore(std::span<const prefdata::TranslationTriplet> triplets, const Task& task,
                        const prefdata::ScorerSpec& scorers, const prefdata::SourceFilter& filter) {
  const auto registry = prefdata::ScorerRegistry::builtin();
  scorers.validate(registry);
  PreferenceBuild out;
  for (auto t : triplets) {
    t.scores.reset();
    const std::string direction = t.direction;
    out.triplets.push_back(prefdata::score_triplet(std::move(t), scorers, registry, oracle_of(task, direction)));
  }
  out.dataset = prefdata::build_dataset(out.triplets, filter);
  return out;
}

nlohmann::json FinetuneResult::summary() const {
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& s : train.trajectory) traj.push_back(to_json(s));
  return {{"pairs", pairs},
          {"steps", train.steps},
          {"base_sha256_before", base_sha_before},
          {"base_sha256_after", base_sha_after},
          {"policy_forwards", policy_forwards},
          {"reference_forwards", reference_forwards},
          {"resident_models", resident_models},
          {"trajectory", traj}};
}

FinetuneResult finetune(const model::Checkpoint& checkpoint, std::span<const prefdata::PreferencePair> pairs,
                        const objectives::LossConfig& loss, const OptimizerConfig& optimizer,
                        const AdapterConfig& adapter, std::uint64_t seed, std::optional<std::uint64_t> steps_limit) {
  loss.validate();
  const auto& base = checkpoint.base;
  if (!base.frozen()) throw Error("config", "finetune expects a frozen base checkpoint");
  const bool pairwise = loss.variant != objectives::Variant::nll;

  std::vector<objectives::PreferenceItem> items;
  for (const auto& p : pairs) {
    if (pairwise && p.preferred == p.dispreferred) continue;
    items.push_back(preference_item(checkpoint.vocabulary, p));
  }
  if (items.empty()) throw Error("config", "no usable preference pairs");

  FinetuneResult out;
  out.pairs = items.size();
  out.base_sha_before = weights_sha256(base);
  out.adapters = model::AdapterParams::init(base.config, adapter.rank, adapter.alpha, derive_seed(seed, "adapter-init"));

  const model::Policy policy(base, &out.adapters);
  const model::Policy reference(base);
  std::vector<Tensor> params;
  for (auto& [name, t] : out.adapters.named()) params.push_back(t);

  out.train = train(
      params, items.size(), optimizer, derive_seed(seed, "finetune-shuffle"),
      [&](Tape& tape, std::span<const std::size_t> idx) {
        std::vector<objectives::PreferenceItem> batch;
        batch.reserve(idx.size());
        for (auto i : idx) batch.push_back(items[i]);
        const auto b = objectives::compute_loss(tape, policy, &reference, batch, loss);
        out.policy_forwards += b.policy_forward_count;
        out.reference_forwards += b.reference_forward_count;
        out.resident_models = b.resident_model_count;
        return BatchLoss{b.total, b.prefer_term, b.nll_term};
      },
      steps_limit);

  out.base_sha_after = weights_sha256(base);
  if (out.base_sha_after != out.base_sha_before) throw Error("frozen-base", "base weights changed during fine-tuning");
  return out;
}

evalharness::SystemOutputs decode_outputs(std::string system, const model::ModelParams& base,
                                          const model::AdapterParams* adapters, const Vocabulary& vocab,
                                          std::span<const TaskRecord> records, std::size_t max_new) {
  const model::Decoder decoder(base, adapters);
  model::DecodeOptions opts;
  opts.max_new = max_new;
  evalharness::SystemOutputs out{std::move(system), {}};
  for (const auto& r : records) {
    const auto [src, tgt] = split_direction(r.direction);
    out.translations[r.id] = model::translate(decoder, vocab, prompt_template(), src, tgt, r.source, opts);
  }
  return out;
}

evalharness::SystemOutputs reference_outputs(std::span<const TaskRecord> records) {
  evalharness::SystemOutputs out{"reference", {}};
  for (const auto& r : records) out.translations[r.id] = r.reference;
  return out;
}

std::vector<evalharness::EvalExample> eval_examples(std::span<const TaskRecord> records) {
  std::vector<evalharness::EvalExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(eval_example(r));
  return out;
}

}  // namespace cpo::experiments
