#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cpo/model/transformer.hpp"

namespace cpo::model {

enum class DecodeMode { greedy, sample };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::greedy;
  double temperature = 1.0;  // sample mode only; 0 falls back to greedy
  std::uint64_t seed = 0;
  std::size_t max_new = 64;
};

/// Incremental inference over dense (adapter-merged) weights with a per-call
/// key/value cache. Construction snapshots the weights; later updates to the
/// source parameters are not observed.
class Decoder {
 public:
  explicit Decoder(const ModelParams& base, const AdapterParams* adapters = nullptr);
  ~Decoder();
  Decoder(Decoder&&) noexcept;
  Decoder& operator=(Decoder&&) noexcept;

  const TransformerConfig& config() const;

  /// New token ids after the prompt, excluding the terminating EOS. Stops at
  /// EOS, after max_new tokens, or when max_seq_len is reached.
  std::vector<int> generate(std::span<const int> prompt, const DecodeOptions& options) const;

  /// Logits for every position of `ids`, row-major [T, vocab], computed
  /// incrementally. Matches Policy::logits.
  std::vector<double> logits(std::span<const int> ids) const;

 private:
  struct Weights;
  std::unique_ptr<Weights> w_;
};

/// Prompt rendering + generation + detokenization.
std::string translate(const Decoder& decoder, const Vocabulary& vocab, const PromptTemplate& prompt,
                      std::string_view src_lang, std::string_view tgt_lang, std::string_view source,
                      const DecodeOptions& options);

/// Index of the largest value; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace cpo::model
