#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpo/compute/tape.hpp"
#include "cpo/model/transformer.hpp"

namespace cpo::objectives {

using compute::Tape;
using compute::Tensor;
using model::Policy;
using model::TokenSequence;

/// One comparison: a rendered prompt and two target id sequences (each ending
/// with EOS), the first preferred over the second.
struct PreferenceItem {
  TokenSequence prompt;
  std::vector<int> chosen;
  std::vector<int> rejected;
};

using PreferenceBatch = std::vector<PreferenceItem>;

enum class Variant { nll, dpo, prefer_only, cpo, dpo_bc };

/// Accepts both the internal names (nll, dpo, prefer_only, cpo, dpo_bc) and the
/// command-line spellings (sft, nll-only, dpo, prefer-only, cpo, dpo-bc).
Variant parse_variant(std::string_view name);
std::string variant_name(Variant v);
bool needs_reference(Variant v);

struct LossConfig {
  Variant variant = Variant::cpo;
  double beta = 0.1;
  double lambda = 1.0;  // weight on the NLL term of cpo and dpo_bc

  void validate() const;
};

/// Batch-mean loss with its parts. prefer_term is the preference part (the
/// DPO term for reference-based variants); nll_term already carries lambda.
/// Forward counts are measured from the models' counters while the loss is
/// built: policy_forward_count covers every model evaluation, and
/// reference_forward_count the subset spent on the reference.
struct LossBreakdown {
  Tensor total;
  double prefer_term = 0;
  double nll_term = 0;
  std::uint64_t policy_forward_count = 0;
  std::uint64_t reference_forward_count = 0;
  std::uint64_t resident_model_count = 1;
  std::size_t items = 0;

  double value() const { return total.item(); }
};

// Scalar forms on per-item log-probabilities. They take tape tensors so the
// same code serves training and numeric checks.

/// −log σ(β (logp_w − logp_l))
Tensor prefer_term(Tape& tape, const Tensor& logp_w, const Tensor& logp_l, double beta);
/// −log σ(β [(logp_w − logp_l) − (ref_w − ref_l)])
Tensor dpo_term(Tape& tape, const Tensor& logp_w, const Tensor& logp_l, double ref_w, double ref_l, double beta);

double prefer_value(double logp_w, double logp_l, double beta);
double dpo_value(double logp_w, double logp_l, double ref_w, double ref_l, double beta);

/// Mean of −log π(y_w|x) over items; rejected targets are never read.
Tensor nll_loss(Tape& tape, const Policy& policy, std::span<const PreferenceItem> batch);
/// Mean of −log π(target|prompt) over joined sequences.
Tensor nll_loss(Tape& tape, const Policy& policy, std::span<const TokenSequence> sequences);

Tensor prefer_loss(Tape& tape, const Policy& policy, std::span<const PreferenceItem> batch, double beta);
Tensor dpo_loss(Tape& tape, const Policy& policy, const Policy* reference, std::span<const PreferenceItem> batch,
                double beta);

LossBreakdown cpo_loss(Tape& tape, const Policy& policy, std::span<const PreferenceItem> batch, double beta,
                       double lambda = 1.0);
LossBreakdown dpo_bc_loss(Tape& tape, const Policy& policy, const Policy* reference,
                          std::span<const PreferenceItem> batch, double beta, double lambda = 1.0);

/// Dispatches on config.variant. `reference` is required for dpo and dpo_bc
/// and ignored otherwise.
LossBreakdown compute_loss(Tape& tape, const Policy& policy, const Policy* reference,
                           std::span<const PreferenceItem> batch, const LossConfig& config);

/// Rejects empty batches, identical pairs and missing prompts.
void validate_batch(std::span<const PreferenceItem> batch, bool need_rejected = true);

// Numeric verifiers.

struct TheoremSides {
  double lhs;  // −[β log p_w − log(p_w^β q_l^β + p_l^β)]
  double rhs;  // −log σ(β log p_w − β log p_l)
};
TheoremSides theorem1_sides(double p_w, double p_l, double q_l, double beta);

struct TheoremReport {
  std::uint64_t samples = 0;
  std::uint64_t violations = 0;
  double max_excess = 0;  // largest lhs − rhs seen (≤ 0 when the bound holds)
};

/// Draws (p_w, p_l, q_l) uniformly in (0, 1) and β from {0.1, 0.5, 1, 2} and
/// counts samples with lhs > rhs + 1e-9.
TheoremReport verify_theorem1(std::uint64_t samples, std::uint64_t seed);

/// KL(π_w ‖ π_θ) with π_w one-hot on y_w, computed as Σ π_w log(π_w / π_θ)
/// over the support of π_w.
double one_hot_kl(double logp);

/// Largest |KL − NLL| over items.
double verify_kl_reduction(const Policy& policy, std::span<const PreferenceItem> batch);

}  // namespace cpo::objectives
