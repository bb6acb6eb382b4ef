#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpo/compute/tape.hpp"
#include "cpo/model/vocabulary.hpp"

namespace cpo::model {

using compute::Tape;
using compute::Tensor;

struct TransformerConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t model_dim = 128;
  std::size_t ff_dim = 256;
  std::size_t max_seq_len = 128;
  std::size_t vocab_size = 0;

  void validate() const;
  bool operator==(const TransformerConfig&) const = default;
};

void to_json(nlohmann::json& j, const TransformerConfig& c);
void from_json(const nlohmann::json& j, TransformerConfig& c);

using NamedTensor = std::pair<std::string, Tensor>;

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

/// Dense base weights of the decoder-only transformer.
struct ModelParams {
  TransformerConfig config;
  Tensor token_embedding;     // [vocab, d]
  Tensor position_embedding;  // [max_seq_len, d]
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor w_out, b_out;  // [d, vocab], [vocab]

  static ModelParams init(const TransformerConfig& config, std::uint64_t seed);

  /// Stable, name-ordered view of every tensor (shares storage).
  std::vector<NamedTensor> named() const;
  std::size_t parameter_count() const;

  /// Frozen weights never require gradients.
  void set_frozen(bool frozen);
  bool frozen() const;

  ModelParams clone() const;
};

/// Linear maps that carry a low-rank adapter.
enum class AdapterSite : std::size_t { query, key, value, output, ff_in, ff_out };
inline constexpr std::size_t kAdapterSites = 6;
const char* site_name(AdapterSite site);

struct LowRankPair {
  Tensor a;  // [in, rank]
  Tensor b;  // [rank, out]
};

/// Trainable low-rank updates: a linear map W becomes W + A·B·(alpha/rank).
struct AdapterParams {
  std::size_t rank = 16;
  double alpha = 32.0;
  std::vector<std::array<LowRankPair, kAdapterSites>> layers;

  /// A ~ N(0, 1/in), B = 0, so a fresh adapter leaves the model unchanged.
  static AdapterParams init(const TransformerConfig& config, std::size_t rank, double alpha, std::uint64_t seed);

  double scaling() const { return alpha / static_cast<double>(rank); }
  std::vector<NamedTensor> named() const;
  std::size_t parameter_count() const;
  AdapterParams clone() const;
  /// Throws if the factor shapes do not fit `config`.
  void check_compatible(const TransformerConfig& config) const;
};

/// Dense weights that reproduce base + adapters.
ModelParams merge_adapters(const ModelParams& base, const AdapterParams& adapters);

/// A base model, optionally with adapters, instrumented with a counter of full
/// forward evaluations. Read-only use is safe from several threads.
class Policy {
 public:
  explicit Policy(const ModelParams& base, const AdapterParams* adapters = nullptr)
      : base_(&base), adapters_(adapters) {}
  Policy(const Policy&) = delete;
  Policy& operator=(const Policy&) = delete;

  const ModelParams& base() const { return *base_; }
  const AdapterParams* adapters() const { return adapters_; }
  const TransformerConfig& config() const { return base_->config; }

  /// Final hidden states [T, d] for the given ids.
  Tensor hidden(Tape& tape, std::span<const int> ids) const;
  /// Output logits [T, vocab].
  Tensor logits(Tape& tape, std::span<const int> ids) const;
  /// Projects hidden rows to logits.
  Tensor project(Tape& tape, const Tensor& hidden) const;

  std::uint64_t forward_count() const { return forwards_.load(std::memory_order_relaxed); }

 private:
  const ModelParams* base_;
  const AdapterParams* adapters_;
  mutable std::atomic<std::uint64_t> forwards_{0};
};

/// log π(target | prompt): sum over target positions of the log-softmax
/// probability of each target id. Prompt positions contribute nothing.
/// Rejects sequences longer than max_seq_len.
Tensor sequence_logprob(Tape& tape, const Policy& policy, const TokenSequence& seq);
Tensor sequence_logprob(Tape& tape, const Policy& policy, const TokenSequence& prompt, std::span<const int> target);

/// Convenience wrapper evaluating on a non-recording tape.
double sequence_logprob_value(const Policy& policy, const TokenSequence& seq);

}  // namespace cpo::model
