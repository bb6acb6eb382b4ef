#include "cpo/objectives/gradcheck.hpp"

#include <algorithm>
#include <random>

#include "cpo/compute/grad_check.hpp"

namespace cpo::objectives {

namespace {

const model::Vocabulary& small_vocab() {
  static const model::Vocabulary v("abcdefgh");
  return v;
}

model::TransformerConfig small_config() {
  model::TransformerConfig c;
  c.layers = 1;
  c.heads = 2;
  c.model_dim = 8;
  c.ff_dim = 16;
  c.max_seq_len = 24;
  c.vocab_size = small_vocab().size();
  return c;
}

std::string random_text(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> sym(0, small_vocab().symbols().size() - 1);
  std::string s(len(rng), ' ');
  for (char& c : s) c = small_vocab().symbols()[sym(rng)];
  return s;
}

}  // namespace

GradcheckReport gradcheck_variant(Variant variant, std::size_t points, std::uint64_t seed, double beta, double lambda) {
  const model::PromptTemplate prompt("{text}");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.3);
  GradcheckReport report;
  for (std::size_t p = 0; p < points; ++p) {
    model::ModelParams base = model::ModelParams::init(small_config(), rng());
    base.set_frozen(true);
    model::AdapterParams adapters = model::AdapterParams::init(base.config, 2, 4.0, rng());
    for (auto& [name, t] : adapters.named()) {
      Tensor x = t;
      for (double& v : x.mutable_values()) v = normal(rng);
    }
    PreferenceBatch batch;
    while (batch.size() < 3) {
      const auto chosen = random_text(rng, 1, 4), rejected = random_text(rng, 1, 4);
      if (chosen == rejected) continue;
      batch.push_back({prompt.render(small_vocab(), "", "", random_text(rng, 1, 4)), small_vocab().encode_target(chosen),
                       small_vocab().encode_target(rejected)});
    }
    const Policy policy(base, &adapters), reference(base);
    std::vector<Tensor> leaves;
    for (auto& [name, t] : adapters.named()) leaves.push_back(t);
    const LossConfig config{variant, beta, lambda};
    const double err = compute::grad_check(
        [&](Tape& tape) { return compute_loss(tape, policy, &reference, batch, config).total; }, leaves);
    report.max_relative_error = std::max(report.max_relative_error, err);
    ++report.points;
  }
  return report;
}

}  // namespace cpo::objectives
