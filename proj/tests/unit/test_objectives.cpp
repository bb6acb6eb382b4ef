#include <doctest.h>

#include <cmath>
#include <random>

#include "cpo/compute/grad_check.hpp"
#include "cpo/objectives/losses.hpp"

using namespace cpo::objectives;
using cpo::model::AdapterParams;
using cpo::model::ModelParams;
using cpo::model::PromptTemplate;
using cpo::model::TransformerConfig;
using cpo::model::Vocabulary;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v("abcdefgh");
  return v;
}

TransformerConfig toy_config() {
  TransformerConfig c;
  c.layers = 1;
  c.heads = 2;
  c.model_dim = 8;
  c.ff_dim = 16;
  c.max_seq_len = 20;
  c.vocab_size = vocab().size();
  return c;
}

PreferenceItem item(std::string_view src, std::string_view good, std::string_view bad) {
  return {PromptTemplate("{text}").render(vocab(), "", "", src), vocab().encode_target(good),
          vocab().encode_target(bad)};
}

PreferenceBatch toy_batch() { return {item("abc", "cba", "cab"), item("hg", "gh", "ghh"), item("d", "e", "f")}; }

ModelParams uniform_model() {
  ModelParams m = ModelParams::init(toy_config(), 1);
  for (double& w : m.w_out.mutable_values()) w = 0;
  for (double& b : m.b_out.mutable_values()) b = 0;
  return m;
}

AdapterParams live_adapters(const TransformerConfig& c, std::uint64_t seed) {
  AdapterParams a = AdapterParams::init(c, 2, 4.0, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& [name, t] : a.named()) {
    Tensor x = t;
    for (double& v : x.mutable_values()) v = n(rng);
  }
  return a;
}

}  // namespace

TEST_CASE("variant names parse in both spellings") {
  CHECK(parse_variant("sft") == Variant::nll);
  CHECK(parse_variant("nll-only") == Variant::nll);
  CHECK(parse_variant("dpo-bc") == Variant::dpo_bc);
  CHECK(parse_variant("prefer_only") == Variant::prefer_only);
  CHECK(parse_variant("cpo") == Variant::cpo);
  CHECK_THROWS(parse_variant("ppo"));
  CHECK_THROWS(LossConfig{Variant::cpo, 0.0, 1.0}.validate());
  CHECK_THROWS(LossConfig{Variant::cpo, 0.1, -1.0}.validate());
}

TEST_CASE("loss arithmetic at the log-probability level") {
  CHECK(prefer_value(-1.0, -1.0, 0.1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(dpo_value(-1.0, -2.0, -1.5, -1.5, 0.1) == doctest::Approx(std::log1p(std::exp(-0.1))).epsilon(1e-14));
  CHECK(dpo_value(-1.0, -2.0, -1.5, -1.5, 0.1) == doctest::Approx(0.644397).epsilon(1e-6));
  const double prefer = prefer_value(std::log(0.8), std::log(0.4), 1.0);
  CHECK(prefer == doctest::Approx(std::log(1.5)).epsilon(1e-14));
  CHECK(prefer == doctest::Approx(0.405465).epsilon(1e-6));
  CHECK(-std::log(0.8) == doctest::Approx(0.223144).epsilon(1e-6));
  CHECK(prefer - std::log(0.8) == doctest::Approx(0.628609).epsilon(1e-6));
  // Perfect policy limit.
  CHECK(prefer_value(0.0, -1e4, 1.0) < 1e-300);
}

TEST_CASE("tensor loss terms agree with scalar forms") {
  Tape t(false);
  const Tensor w = Tensor::scalar(std::log(0.8)), l = Tensor::scalar(std::log(0.4));
  CHECK(prefer_term(t, w, l, 1.0).item() == doctest::Approx(prefer_value(std::log(0.8), std::log(0.4), 1.0)));
  CHECK(dpo_term(t, Tensor::scalar(-1.0), Tensor::scalar(-2.0), -1.5, -1.5, 0.1).item() ==
        doctest::Approx(0.644397).epsilon(1e-6));
}

TEST_CASE("prefer loss falls strictly as the preferred log-probability rises") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-30.0, -0.01);
  for (double beta : {0.01, 0.1, 1.0, 5.0}) {
    for (int trial = 0; trial < 50; ++trial) {
      const double l = u(rng);
      double w = u(rng), prev = prefer_value(w, l, beta);
      for (int step = 0; step < 20; ++step) {
        w += 0.5;
        const double next = prefer_value(w, l, beta);
        CHECK(next < prev);
        prev = next;
      }
      // Gradient sign with respect to log π(y_w|x).
      Tensor tw = Tensor::scalar(w, true);
      Tape tape;
      tape.backward(prefer_term(tape, tw, Tensor::scalar(l), beta));
      CHECK(tw.grad()[0] < 0);
    }
  }
}

TEST_CASE("nll loss on toy models") {
  SUBCASE("uniform model over 8 symbols and three target tokens") {
    const Vocabulary v8("abcd");
    TransformerConfig c = toy_config();
    c.vocab_size = v8.size();
    ModelParams m = ModelParams::init(c, 1);
    for (double& w : m.w_out.mutable_values()) w = 0;
    for (double& x : m.b_out.mutable_values()) x = 0;
    Policy p(m);
    PreferenceBatch b{{PromptTemplate("{text}").render(v8, "", "", "ab"), v8.encode_target("cd"), v8.encode_target("dc")}};
    Tape t(false);
    CHECK(nll_loss(t, p, b).item() == doctest::Approx(3.0 * std::log(8.0)).epsilon(1e-12));
    CHECK(3.0 * std::log(8.0) == doctest::Approx(6.2383).epsilon(1e-4));
  }
  SUBCASE("a model certain of EOS scores zero") {
    ModelParams m = uniform_model();
    m.b_out.mutable_values()[Vocabulary::kEos] = 1e3;
    Policy p(m);
    PreferenceBatch b{{PromptTemplate("{text}").render(vocab(), "", "", "ab"), {Vocabulary::kEos}, {}}};
    Tape t(false);
    CHECK(nll_loss(t, p, b).item() == 0.0);
  }
  SUBCASE("random model matches independent recomputation") {
    ModelParams m = ModelParams::init(toy_config(), 9);
    Policy p(m);
    const PreferenceBatch b = toy_batch();
    double manual = 0;
    for (const auto& it : b) manual -= cpo::model::sequence_logprob_value(p, cpo::model::join(it.prompt, it.chosen));
    Tape t(false);
    CHECK(nll_loss(t, p, b).item() == doctest::Approx(manual / 3.0).epsilon(1e-12));
  }
  SUBCASE("empty batch is rejected") {
    ModelParams m = uniform_model();
    Policy p(m);
    Tape t(false);
    CHECK_THROWS(nll_loss(t, p, PreferenceBatch{}));
  }
}

TEST_CASE("dpo with an identical reference gives ln 2") {
  ModelParams m = ModelParams::init(toy_config(), 5);
  Policy policy(m), reference(m);
  Tape t(false);
  CHECK(dpo_loss(t, policy, &reference, toy_batch(), 0.1).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS(dpo_loss(t, policy, nullptr, toy_batch(), 0.1));
  CHECK_THROWS(dpo_bc_loss(t, policy, nullptr, toy_batch(), 0.1));
}

TEST_CASE("a reference indifferent between targets cancels out") {
  // Uniform logits assign equal probability to equal-length targets.
  ModelParams ref_params = uniform_model();
  ModelParams m = ModelParams::init(toy_config(), 6);
  AdapterParams a = live_adapters(m.config, 3);
  Policy policy(m, &a), reference(ref_params);
  PreferenceBatch b{item("abc", "cba", "cab"), item("hg", "gh", "hg"), item("d", "e", "f")};
  for (double beta : {0.1, 1.0}) {
    Tape t(false);
    const double dpo = dpo_loss(t, policy, &reference, b, beta).item();
    const double prefer = prefer_loss(t, policy, b, beta).item();
    CHECK(std::abs(dpo - prefer) <= 1e-9);
    const auto bc = dpo_bc_loss(t, policy, &reference, b, beta);
    const auto cpo = cpo_loss(t, policy, b, beta);
    CHECK(std::abs(bc.value() - cpo.value()) <= 1e-9);
  }
}

TEST_CASE("cpo total is the sum of its reported parts") {
  ModelParams m = ModelParams::init(toy_config(), 8);
  AdapterParams a = live_adapters(m.config, 4);
  Policy p(m, &a);
  Tape t(false);
  const auto b = toy_batch();
  const auto cpo = cpo_loss(t, p, b, 0.1);
  CHECK(std::abs(cpo.value() - (cpo.prefer_term + cpo.nll_term)) <= 1e-9);
  CHECK(cpo.prefer_term == doctest::Approx(prefer_loss(t, p, b, 0.1).item()).epsilon(1e-12));
  CHECK(cpo.nll_term == doctest::Approx(nll_loss(t, p, b).item()).epsilon(1e-12));
  const auto half = cpo_loss(t, p, b, 0.1, 0.5);
  CHECK(half.nll_term == doctest::Approx(0.5 * cpo.nll_term).epsilon(1e-12));
  for (double v : {cpo.value(), cpo.prefer_term, cpo.nll_term}) {
    CHECK(std::isfinite(v));
    CHECK(v > 0);
  }
}

TEST_CASE("dpo_bc with an identical reference and a certain policy is ln 2") {
  ModelParams m = uniform_model();
  m.b_out.mutable_values()[Vocabulary::kEos] = 1e3;
  Policy policy(m), reference(m);
  PreferenceBatch b{{PromptTemplate("{text}").render(vocab(), "", "", "ab"), {Vocabulary::kEos}, vocab().encode_target("a")}};
  Tape t(false);
  const auto bc = dpo_bc_loss(t, policy, &reference, b, 0.1);
  CHECK(bc.nll_term == 0.0);
  CHECK(bc.value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cpo gradients match finite differences and the sum of the parts") {
  ModelParams m = ModelParams::init(toy_config(), 10);
  m.set_frozen(true);
  AdapterParams a = live_adapters(m.config, 11);
  Policy p(m, &a);
  const auto b = toy_batch();
  std::vector<Tensor> leaves;
  for (auto& [name, x] : a.named()) leaves.push_back(x);

  CHECK(cpo::compute::grad_check([&](Tape& t) { return cpo_loss(t, p, b, 0.5).total; }, leaves) <= 1e-4);

  auto grads_of = [&](auto&& loss) {
    for (auto& x : leaves) x.zero_grad();
    Tape t;
    t.backward(loss(t));
    std::vector<double> g;
    for (auto& x : leaves) g.insert(g.end(), x.grad().begin(), x.grad().end());
    return g;
  };
  const auto total = grads_of([&](Tape& t) { return cpo_loss(t, p, b, 0.5).total; });
  const auto pref = grads_of([&](Tape& t) { return prefer_loss(t, p, b, 0.5); });
  const auto nll = grads_of([&](Tape& t) { return nll_loss(t, p, b); });
  double worst = 0;
  for (std::size_t i = 0; i < total.size(); ++i) worst = std::max(worst, std::abs(total[i] - pref[i] - nll[i]));
  CHECK(worst <= 1e-12);
  for (const auto& [name, x] : m.named()) CHECK_FALSE(x.has_grad());
}

TEST_CASE("forward counters separate one-model and two-model variants") {
  ModelParams m = ModelParams::init(toy_config(), 12);
  Policy policy(m), reference(m);
  const auto b = toy_batch();
  const std::uint64_t n = b.size();
  auto run = [&](Variant v) {
    Tape t(false);
    return compute_loss(t, policy, &reference, b, LossConfig{v, 0.1, 1.0});
  };
  const auto cpo = run(Variant::cpo), prefer = run(Variant::prefer_only), dpo = run(Variant::dpo),
             bc = run(Variant::dpo_bc), nll = run(Variant::nll);
  CHECK(cpo.policy_forward_count == 2 * n);
  CHECK(prefer.policy_forward_count == 2 * n);
  CHECK(dpo.policy_forward_count == 4 * n);
  CHECK(bc.policy_forward_count == 4 * n);
  CHECK(nll.policy_forward_count == n);
  CHECK(dpo.reference_forward_count == 2 * n);
  CHECK(cpo.reference_forward_count == 0);
  CHECK(cpo.resident_model_count == 1);
  CHECK(prefer.resident_model_count == 1);
  CHECK(dpo.resident_model_count == 2);
  CHECK(bc.resident_model_count == 2);
}

TEST_CASE("batches with identical targets are rejected") {
  ModelParams m = uniform_model();
  Policy p(m);
  Tape t(false);
  PreferenceBatch b{item("a", "b", "b")};
  CHECK_THROWS(cpo_loss(t, p, b, 0.1));
}

TEST_CASE("theorem bound at specific points") {
  const auto s = theorem1_sides(0.6, 0.3, 0.5, 1.0);
  CHECK(std::abs(s.lhs) <= 1e-15);
  CHECK(s.rhs == doctest::Approx(std::log(1.5)).epsilon(1e-14));
  for (double beta : {0.1, 0.5, 1.0, 2.0}) {
    const auto tight = theorem1_sides(0.37, 0.81, 1.0, beta);
    CHECK(tight.lhs == doctest::Approx(tight.rhs).epsilon(1e-14));
  }
}

TEST_CASE("theorem bound holds over a Monte-Carlo sweep") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = verify_theorem1(100000, seed);
    CHECK(r.samples == 100000);
    CHECK(r.violations == 0);
    CHECK(r.max_excess <= 1e-9);
  }
  CHECK_THROWS(verify_theorem1(0, 1));
}

TEST_CASE("one-hot KL reduces to the NLL") {
  CHECK(one_hot_kl(0.0) == 0.0);
  CHECK(one_hot_kl(-2.5) == 2.5);
  std::mt19937_64 rng(3);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    ModelParams m = ModelParams::init(toy_config(), rng());
    Policy p(m);
    worst = std::max(worst, verify_kl_reduction(p, toy_batch()));
  }
  CHECK(worst <= 1e-12);
}
