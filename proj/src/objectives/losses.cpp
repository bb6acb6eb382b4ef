#include "cpo/objectives/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace cpo::objectives {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

model::TokenSequence joined(const PreferenceItem& item, bool chosen) {
  return model::join(item.prompt, chosen ? item.chosen : item.rejected);
}

// Sequence log-probabilities of both targets, recorded on the tape.
struct PairLogp {
  std::vector<Tensor> chosen, rejected;
};

PairLogp pair_logp(Tape& tape, const Policy& policy, std::span<const PreferenceItem> batch) {
  PairLogp out;
  for (const auto& item : batch) {
    out.chosen.push_back(model::sequence_logprob(tape, policy, item.prompt, item.chosen));
    out.rejected.push_back(model::sequence_logprob(tape, policy, item.prompt, item.rejected));
  }
  return out;
}

struct RefLogp {
  std::vector<double> chosen, rejected;
};

RefLogp reference_logp(const Policy& reference, std::span<const PreferenceItem> batch) {
  RefLogp out;
  for (const auto& item : batch) {
    out.chosen.push_back(model::sequence_logprob_value(reference, joined(item, true)));
    out.rejected.push_back(model::sequence_logprob_value(reference, joined(item, false)));
  }
  return out;
}

const Policy& require_reference(const Policy* reference, const char* who) {
  if (reference == nullptr) throw std::invalid_argument(std::string(who) + ": reference model required");
  return *reference;
}

Tensor batch_mean(Tape& tape, const std::vector<Tensor>& terms) { return tape.mean(tape.stack(terms)); }

}  // namespace

Variant parse_variant(std::string_view name) {
  if (name == "nll" || name == "sft" || name == "nll-only" || name == "nll_only") return Variant::nll;
  if (name == "dpo") return Variant::dpo;
  if (name == "prefer_only" || name == "prefer-only") return Variant::prefer_only;
  if (name == "cpo") return Variant::cpo;
  if (name == "dpo_bc" || name == "dpo-bc") return Variant::dpo_bc;
  throw std::invalid_argument("unknown loss variant '" + std::string(name) + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::nll: return "nll";
    case Variant::dpo: return "dpo";
    case Variant::prefer_only: return "prefer_only";
    case Variant::cpo: return "cpo";
    case Variant::dpo_bc: return "dpo_bc";
  }
  return "?";
}

bool needs_reference(Variant v) { return v == Variant::dpo || v == Variant::dpo_bc; }

void LossConfig::validate() const {
  if (!(beta > 0) || !std::isfinite(beta)) throw std::invalid_argument("beta must be positive, got " + std::to_string(beta));
  if (!(lambda >= 0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("lambda must be nonnegative, got " + std::to_string(lambda));
  }
}

void validate_batch(std::span<const PreferenceItem> batch, bool need_rejected) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& item = batch[i];
    if (item.prompt.prompt_len == 0) throw std::invalid_argument("item " + std::to_string(i) + ": empty prompt");
    if (item.chosen.empty()) throw std::invalid_argument("item " + std::to_string(i) + ": empty preferred target");
    if (need_rejected && item.chosen == item.rejected) {
      throw std::invalid_argument("item " + std::to_string(i) + ": preferred and dis-preferred targets are identical");
    }
  }
}

Tensor prefer_term(Tape& tape, const Tensor& logp_w, const Tensor& logp_l, double beta) {
  return tape.scale(tape.log_sigmoid(tape.scale(tape.sub(logp_w, logp_l), beta)), -1.0);
}

Tensor dpo_term(Tape& tape, const Tensor& logp_w, const Tensor& logp_l, double ref_w, double ref_l, double beta) {
  Tensor margin = tape.sub(tape.sub(logp_w, logp_l), Tensor::scalar(ref_w - ref_l));
  return tape.scale(tape.log_sigmoid(tape.scale(margin, beta)), -1.0);
}

double prefer_value(double logp_w, double logp_l, double beta) { return softplus(-beta * (logp_w - logp_l)); }

double dpo_value(double logp_w, double logp_l, double ref_w, double ref_l, double beta) {
  return softplus(-beta * ((logp_w - logp_l) - (ref_w - ref_l)));
}

Tensor nll_loss(Tape& tape, const Policy& policy, std::span<const PreferenceItem> batch) {
  validate_batch(batch, false);
  std::vector<Tensor> terms;
  for (const auto& item : batch) terms.push_back(model::sequence_logprob(tape, policy, item.prompt, item.chosen));
  return tape.scale(batch_mean(tape, terms), -1.0);
}

Tensor nll_loss(Tape& tape, const Policy& policy, std::span<const TokenSequence> sequences) {
  if (sequences.empty()) throw std::invalid_argument("empty batch");
  std::vector<Tensor> terms;
  for (const auto& seq : sequences) terms.push_back(model::sequence_logprob(tape, policy, seq));
  return tape.scale(batch_mean(tape, terms), -1.0);
}

Tensor prefer_loss(Tape& tape, const Policy& policy, std::span<const PreferenceItem> batch, double beta) {
  validate_batch(batch);
  const PairLogp lp = pair_logp(tape, policy, batch);
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) terms.push_back(prefer_term(tape, lp.chosen[i], lp.rejected[i], beta));
  return batch_mean(tape, terms);
}

Tensor dpo_loss(Tape& tape, const Policy& policy, const Policy* reference, std::span<const PreferenceItem> batch,
                double beta) {
  const Policy& ref = require_reference(reference, "dpo_loss");
  validate_batch(batch);
  const RefLogp r = reference_logp(ref, batch);
  const PairLogp lp = pair_logp(tape, policy, batch);
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    terms.push_back(dpo_term(tape, lp.chosen[i], lp.rejected[i], r.chosen[i], r.rejected[i], beta));
  }
  return batch_mean(tape, terms);
}

namespace {

// Shared body of every variant. The preference part is skipped for nll, and
// the NLL part for dpo and prefer_only.
LossBreakdown build(Tape& tape, const Policy& policy, const Policy* reference, std::span<const PreferenceItem> batch,
                    const LossConfig& config) {
  config.validate();
  const Variant v = config.variant;
  validate_batch(batch, v != Variant::nll);

  LossBreakdown out;
  out.items = batch.size();
  out.resident_model_count = needs_reference(v) ? 2 : 1;

  RefLogp ref;
  if (needs_reference(v)) {
    const Policy& r = require_reference(reference, variant_name(v).c_str());
    const auto before = r.forward_count();
    ref = reference_logp(r, batch);
    out.reference_forward_count = r.forward_count() - before;
  }

  const auto before = policy.forward_count();
  std::vector<Tensor> chosen, rejected;
  for (const auto& item : batch) {
    chosen.push_back(model::sequence_logprob(tape, policy, item.prompt, item.chosen));
    if (v != Variant::nll) rejected.push_back(model::sequence_logprob(tape, policy, item.prompt, item.rejected));
  }
  out.policy_forward_count = policy.forward_count() - before + out.reference_forward_count;

  std::optional<Tensor> prefer, nll;
  if (v != Variant::nll) {
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      terms.push_back(needs_reference(v)
                          ? dpo_term(tape, chosen[i], rejected[i], ref.chosen[i], ref.rejected[i], config.beta)
                          : prefer_term(tape, chosen[i], rejected[i], config.beta));
    }
    prefer = batch_mean(tape, terms);
    out.prefer_term = prefer->item();
  }
  if (v == Variant::nll || v == Variant::cpo || v == Variant::dpo_bc) {
    const double weight = v == Variant::nll ? 1.0 : config.lambda;
    nll = tape.scale(batch_mean(tape, chosen), -weight);
    out.nll_term = nll->item();
  }
  out.total = prefer && nll ? tape.add(*prefer, *nll) : (prefer ? *prefer : *nll);
  return out;
}

}  // namespace

LossBreakdown cpo_loss(Tape& tape, const Policy& policy, std::span<const PreferenceItem> batch, double beta,
                       double lambda) {
  return build(tape, policy, nullptr, batch, LossConfig{Variant::cpo, beta, lambda});
}

LossBreakdown dpo_bc_loss(Tape& tape, const Policy& policy, const Policy* reference,
                          std::span<const PreferenceItem> batch, double beta, double lambda) {
  require_reference(reference, "dpo_bc_loss");
  return build(tape, policy, reference, batch, LossConfig{Variant::dpo_bc, beta, lambda});
}

LossBreakdown compute_loss(Tape& tape, const Policy& policy, const Policy* reference,
                           std::span<const PreferenceItem> batch, const LossConfig& config) {
  return build(tape, policy, reference, batch, config);
}

TheoremSides theorem1_sides(double p_w, double p_l, double q_l, double beta) {
  const double lw = std::log(p_w), ll = std::log(p_l), lq = std::log(q_l);
  const double lhs = -(beta * lw - log_add_exp(beta * (lw + lq), beta * ll));
  const double rhs = softplus(beta * (ll - lw));
  return {lhs, rhs};
}

TheoremReport verify_theorem1(std::uint64_t samples, std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("verify_theorem1: samples must be at least 1");
  static constexpr double kBetas[] = {0.1, 0.5, 1.0, 2.0};
  std::mt19937_64 rng(seed);
  // Open interval: the lower end is nudged off zero so logs stay finite.
  std::uniform_real_distribution<double> unit(std::nextafter(0.0, 1.0), 1.0);
  std::uniform_int_distribution<int> pick(0, 3);
  TheoremReport report;
  report.samples = samples;
  report.max_excess = -std::numeric_limits<double>::infinity();
  for (std::uint64_t i = 0; i < samples; ++i) {
    const double p_w = unit(rng), p_l = unit(rng), q_l = unit(rng);
    const double beta = kBetas[pick(rng)];
    const auto s = theorem1_sides(p_w, p_l, q_l, beta);
    report.max_excess = std::max(report.max_excess, s.lhs - s.rhs);
    if (!(s.lhs <= s.rhs + 1e-9)) ++report.violations;
  }
  return report;
}

double one_hot_kl(double logp) {
  // The only outcome with π_w > 0 is y_w, with π_w = 1.
  const double pi_w = 1.0;
  return pi_w * (std::log(pi_w) - logp);
}

double verify_kl_reduction(const Policy& policy, std::span<const PreferenceItem> batch) {
  validate_batch(batch, false);
  double worst = 0;
  for (const auto& item : batch) {
    const double logp = model::sequence_logprob_value(policy, joined(item, true));
    worst = std::max(worst, std::abs(one_hot_kl(logp) - (-logp)));
  }
  return worst;
}

}  // namespace cpo::objectives
