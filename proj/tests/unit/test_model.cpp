#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "cpo/model/checkpoint.hpp"
#include "cpo/model/decoder.hpp"
#include "cpo/model/transformer.hpp"

using namespace cpo::model;
using cpo::compute::Tensor;

namespace {

TransformerConfig toy_config(std::size_t vocab) {
  TransformerConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 16;
  c.ff_dim = 32;
  c.max_seq_len = 24;
  c.vocab_size = vocab;
  return c;
}

void fill_random(Tensor t, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  for (double& v : t.mutable_values()) v = n(rng);
}

// Adapter with both factors non-zero so it actually changes the model.
AdapterParams live_adapters(const TransformerConfig& c, std::size_t rank, std::uint64_t seed) {
  AdapterParams a = AdapterParams::init(c, rank, 2.0 * static_cast<double>(rank), seed);
  std::mt19937_64 rng(seed + 1);
  for (auto& [name, t] : a.named()) fill_random(t, rng, 0.2);
  return a;
}

std::vector<int> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(vocab) - 1);
  std::vector<int> ids(n);
  for (int& id : ids) id = d(rng);
  return ids;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> policy_logits(const Policy& p, std::span<const int> ids) {
  Tape t(false);
  Tensor l = p.logits(t, ids);
  return {l.values().begin(), l.values().end()};
}

}  // namespace

TEST_CASE("tokenize frames text with BOS and EOS") {
  const Vocabulary v = Vocabulary::default_charset();
  CHECK(v.tokenize("").ids == std::vector<int>{Vocabulary::kBos, Vocabulary::kEos});

  const Vocabulary ab(" ab");
  CHECK(ab.id('a') == 5);
  CHECK(ab.id('b') == 6);
  CHECK(ab.tokenize("ab").ids == std::vector<int>{Vocabulary::kBos, 5, 6, Vocabulary::kEos});
}

TEST_CASE("random text round-trips through tokenize and detokenize") {
  const Vocabulary v = Vocabulary::default_charset();
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> pick(0, v.symbols().size() - 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::string s;
    for (int i = 0; i < 50; ++i) s.push_back(v.symbols()[pick(rng)]);
    CHECK(v.detokenize(v.tokenize(s).ids) == s);
    CHECK(v.encode(v.detokenize(v.encode(s))) == v.encode(s));
  }
}

TEST_CASE("unknown symbols are rejected with the character") {
  const Vocabulary v = Vocabulary::default_charset();
  try {
    v.tokenize("ab#c");
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find('#') != std::string::npos);
  }
  CHECK_THROWS(Vocabulary("abca"));
}

TEST_CASE("prompt template ends with a single SEP and no EOS") {
  const Vocabulary v = Vocabulary::default_charset();
  const PromptTemplate tpl;
  const TokenSequence p = tpl.render(v, "en", "de", "hello there");
  CHECK(p.prompt_len == p.size());
  CHECK(p.ids.front() == Vocabulary::kBos);
  CHECK(p.ids.back() == Vocabulary::kSep);
  CHECK(std::count(p.ids.begin(), p.ids.end(), Vocabulary::kSep) == 1);
  CHECK(std::count(p.ids.begin(), p.ids.end(), Vocabulary::kEos) == 0);
  CHECK(tpl.render_text("en", "de", "x") == "en>de: x");
}

TEST_CASE("uniform logits give -|y| ln |V|") {
  const Vocabulary v("abcd");
  REQUIRE(v.size() == 8);
  ModelParams m = ModelParams::init(toy_config(8), 1);
  for (double& w : m.w_out.mutable_values()) w = 0;
  for (double& b : m.b_out.mutable_values()) b = 0;
  Policy p(m);
  const TokenSequence seq = join(PromptTemplate("{text}").render(v, "", "", "ab"), v.encode_target("cd"));
  REQUIRE(seq.target().size() == 3);
  CHECK(sequence_logprob_value(p, seq) == doctest::Approx(-3.0 * std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("probabilities over the complete EOS-terminated tree sum to one") {
  // |V| = 4: the reserved ids alone. Leaves are EOS-terminated targets of at
  // most three tokens plus the unterminated length-3 prefixes.
  const std::size_t V = 4;
  ModelParams m = ModelParams::init(toy_config(V), 23);
  std::mt19937_64 rng(5);
  fill_random(m.w_out, rng, 1.0);
  Policy p(m);
  const TokenSequence prompt{{Vocabulary::kBos, Vocabulary::kSep}, 2};
  const std::size_t L = 3;

  double total = 0;
  std::vector<int> prefix;
  std::function<void()> walk = [&] {
    for (int tok = 0; tok < static_cast<int>(V); ++tok) {
      prefix.push_back(tok);
      const bool leaf = tok == Vocabulary::kEos || prefix.size() == L;
      if (leaf) {
        Tape t(false);
        total += std::exp(sequence_logprob(t, p, prompt, prefix).item());
      } else {
        walk();
      }
      prefix.pop_back();
    }
  };
  walk();
  CHECK(std::abs(total - 1.0) <= 1e-9);
}

TEST_CASE("greedy output beats every single-token perturbation") {
  const Vocabulary v("abcdefgh");
  ModelParams m = ModelParams::init(toy_config(v.size()), 7);
  // Sharpen the output layer so the model is confident, as a trained one is.
  for (double& w : m.w_out.mutable_values()) w *= 8.0;
  Policy p(m);
  Decoder d(m);
  const TokenSequence prompt = PromptTemplate("{text}").render(v, "", "", "abc");
  std::vector<int> y = d.generate(prompt.ids, DecodeOptions{DecodeMode::greedy, 1.0, 0, 6});
  if (y.size() < 6) y.push_back(Vocabulary::kEos);
  REQUIRE_FALSE(y.empty());

  Tape t(false);
  const double best = sequence_logprob(t, p, prompt, y).item();
  int compared = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (int tok = 0; tok < static_cast<int>(v.size()); ++tok) {
      if (tok == y[i] || tok == Vocabulary::kEos) continue;
      std::vector<int> z = y;
      z[i] = tok;
      Tape u(false);
      CHECK(best >= sequence_logprob(u, p, prompt, z).item());
      ++compared;
    }
  }
  CHECK(compared > 0);
}

TEST_CASE("sequence_logprob counts target tokens only") {
  const Vocabulary v = Vocabulary::default_charset();
  ModelParams m = ModelParams::init(toy_config(v.size()), 3);
  Policy p(m);
  const TokenSequence prompt = PromptTemplate().render(v, "en", "de", "abc");
  const std::vector<int> target = v.encode_target("xy");
  const TokenSequence seq = join(prompt, target);

  const std::vector<double> logits = policy_logits(p, seq.ids);
  const std::size_t V = v.size();
  double manual = 0;
  for (std::size_t pos = seq.prompt_len; pos < seq.size(); ++pos) {
    const double* row = logits.data() + (pos - 1) * V;
    double mx = *std::max_element(row, row + V), z = 0;
    for (std::size_t k = 0; k < V; ++k) z += std::exp(row[k] - mx);
    manual += row[seq.ids[pos]] - mx - std::log(z);
  }
  const double value = sequence_logprob_value(p, seq);
  CHECK(value == doctest::Approx(manual).epsilon(1e-12));
  CHECK(value <= 0.0);
  Tape t(false);
  CHECK(sequence_logprob(t, p, prompt, target).item() == value);
}

TEST_CASE("overlength sequences are rejected") {
  const Vocabulary v = Vocabulary::default_charset();
  ModelParams m = ModelParams::init(toy_config(v.size()), 3);
  Policy p(m);
  const TokenSequence prompt = PromptTemplate().render(v, "en", "de", "abc");
  const TokenSequence seq = join(prompt, v.encode_target(std::string(30, 'a')));
  CHECK_THROWS_AS(sequence_logprob_value(p, seq), std::length_error);
}

TEST_CASE("decoder logits agree with the training forward pass") {
  const Vocabulary v = Vocabulary::default_charset();
  const TransformerConfig c = toy_config(v.size());
  ModelParams m = ModelParams::init(c, 11);
  AdapterParams a = live_adapters(c, 2, 4);
  Policy p(m, &a);
  Decoder d(m, &a);
  std::mt19937_64 rng(1);
  const auto ids = random_ids(rng, 12, v.size());
  CHECK(max_abs_diff(d.logits(ids), policy_logits(p, ids)) <= 1e-9);
}

TEST_CASE("sampling is deterministic and temperature zero is greedy") {
  const Vocabulary v = Vocabulary::default_charset();
  ModelParams m = ModelParams::init(toy_config(v.size()), 12);
  Decoder d(m);
  const TokenSequence prompt = PromptTemplate().render(v, "en", "de", "abc");
  const auto greedy = d.generate(prompt.ids, {DecodeMode::greedy, 1.0, 0, 8});
  CHECK(d.generate(prompt.ids, {DecodeMode::sample, 0.0, 99, 8}) == greedy);
  const DecodeOptions hot{DecodeMode::sample, 1.5, 1234, 8};
  CHECK(d.generate(prompt.ids, hot) == d.generate(prompt.ids, hot));
  CHECK(d.generate(prompt.ids, hot).size() <= 8);
  CHECK_THROWS(d.generate(prompt.ids, {DecodeMode::sample, -1.0, 0, 8}));
}

TEST_CASE("greedy decoding is invariant to positive rescaling of logits") {
  const Vocabulary v = Vocabulary::default_charset();
  ModelParams m = ModelParams::init(toy_config(v.size()), 13);
  std::mt19937_64 rng(8);
  fill_random(m.b_out, rng, 0.5);
  Decoder base(m);
  for (double s : {0.25, 3.0, 40.0}) {
    ModelParams scaled = m.clone();
    for (double& w : scaled.w_out.mutable_values()) w *= s;
    for (double& b : scaled.b_out.mutable_values()) b *= s;
    Decoder d(scaled);
    for (const char* text : {"abc", "hello", "x"}) {
      const TokenSequence prompt = PromptTemplate().render(v, "en", "de", text);
      CHECK(d.generate(prompt.ids, {}) == base.generate(prompt.ids, {}));
    }
  }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  const std::vector<double> v{1.0, 3.0, 3.0, 2.0};
  CHECK(argmax(v) == 1);
}

TEST_CASE("a zero B factor leaves the base model unchanged") {
  const Vocabulary v = Vocabulary::default_charset();
  const TransformerConfig c = toy_config(v.size());
  ModelParams m = ModelParams::init(c, 2);
  AdapterParams a = AdapterParams::init(c, 4, 8.0, 9);
  Policy base(m), adapted(m, &a);
  std::mt19937_64 rng(3);
  const auto ids = random_ids(rng, 10, v.size());
  CHECK(policy_logits(base, ids) == policy_logits(adapted, ids));
}

TEST_CASE("merged adapters reproduce the adapted forward pass") {
  const Vocabulary v = Vocabulary::default_charset();
  const TransformerConfig c = toy_config(v.size());
  ModelParams m = ModelParams::init(c, 21);
  AdapterParams a = live_adapters(c, 3, 6);
  ModelParams merged = merge_adapters(m, a);
  Policy adapted(m, &a), dense(merged);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> len(1, c.max_seq_len);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const auto ids = random_ids(rng, len(rng), v.size());
    worst = std::max(worst, max_abs_diff(policy_logits(adapted, ids), policy_logits(dense, ids)));
  }
  CHECK(worst <= 1e-6);
  // Merging copies: the base is untouched.
  CHECK(m.layers[0].wq.values()[0] != merged.layers[0].wq.values()[0]);
}

TEST_CASE("adapter parameter count follows from the shapes") {
  TransformerConfig c = toy_config(10);
  const std::size_t d = c.model_dim, f = c.ff_dim, r = 2;
  const AdapterParams a = AdapterParams::init(c, r, 4.0, 0);
  // Four d->d attention maps, then d->f and f->d.
  const std::size_t per_layer = 4 * (d * r + r * d) + (d * r + r * f) + (f * r + r * d);
  CHECK(a.parameter_count() == c.layers * per_layer);
  const ModelParams m = ModelParams::init(c, 0);
  CHECK(a.parameter_count() * 5 < m.parameter_count());
}

TEST_CASE("incompatible adapters are rejected") {
  const TransformerConfig c = toy_config(10);
  TransformerConfig wider = c;
  wider.model_dim = 24;
  const AdapterParams a = AdapterParams::init(wider, 2, 4.0, 0);
  CHECK_THROWS(a.check_compatible(c));
  ModelParams m = ModelParams::init(c, 0);
  CHECK_THROWS(merge_adapters(m, a));
  AdapterParams bad = AdapterParams::init(c, 2, 4.0, 0);
  bad.rank = 3;
  CHECK_THROWS(bad.check_compatible(c));
}

TEST_CASE("frozen base tensors never require gradients") {
  ModelParams m = ModelParams::init(toy_config(10), 0);
  m.set_frozen(true);
  CHECK(m.frozen());
  for (const auto& [name, t] : m.named()) CHECK_FALSE(t.requires_grad());
  m.set_frozen(false);
  for (const auto& [name, t] : m.named()) CHECK(t.requires_grad());
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const Vocabulary v = Vocabulary::default_charset();
  const TransformerConfig c = toy_config(v.size());
  Checkpoint ck{ModelParams::init(c, 31), live_adapters(c, 2, 8), v, 31, 77, {{"note", "x"}}};
  const auto dir = std::filesystem::temp_directory_path() / "cpo_test_model_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir / "model", ck);
  const Checkpoint back = load_checkpoint(dir / "model");
  CHECK(back.base.config == c);
  CHECK(back.vocabulary == v);
  CHECK(back.seed == 31);
  CHECK(back.steps == 77);
  CHECK(back.extra == ck.extra);
  REQUIRE(back.adapters.has_value());
  CHECK(back.adapters->rank == 2);

  auto expect = ck.base.named();
  for (auto& t : ck.adapters->named()) expect.push_back(t);
  auto got = back.base.named();
  for (auto& t : back.adapters->named()) got.push_back(t);
  REQUIRE(expect.size() == got.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto a = expect[i].second.values(), b = got[i].second.values();
    INFO(expect[i].first);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  }

  // A corrupted blob is refused.
  {
    std::fstream f(checkpoint_blob(dir / "model"), std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS(load_checkpoint(dir / "model"));
  std::filesystem::remove_all(dir);
}
