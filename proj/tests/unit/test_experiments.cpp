#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cpo/common/error.hpp"
#include "cpo/common/jsonl.hpp"
#include "cpo/experiments/pipeline.hpp"
#include "cpo/experiments/seeds.hpp"
#include "cpo/experiments/stages.hpp"
#include "cpo/experiments/trainer.hpp"

using namespace cpo::experiments;
namespace fs = std::filesystem;
using cpo::prefdata::Provenance;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cpo-test-experiments-" + name);
  fs::remove_all(p);
  return p;
}

RunConfig tiny_config(const fs::path& run_dir) {
  RunConfig c;
  c.task.lexicon_size = 12;
  c.task.min_words = 2;
  c.task.max_words = 4;
  c.task.train = 48;
  c.task.dev = 8;
  c.task.test = 8;
  c.model.layers = 1;
  c.model.heads = 2;
  c.model.model_dim = 16;
  c.model.ff_dim = 32;
  c.model.max_seq_len = 64;
  c.adapter.rank = 2;
  c.adapter.alpha = 4;
  c.sft = {3e-3, 8, 0.01, 2};
  c.finetune = {1e-3, 8, 0.01, 1};
  c.eval.max_new = 24;
  c.variants = {"sft", "dpo", "cpo"};
  c.ablations = {"noised-dispreferred"};
  c.seed = 3;
  c.run_dir = run_dir.string();
  return c;
}

// Word-level expectation of the reference score, independent of the scorer:
// a record with n words and d deletions scores 100 (n − d) / n.
double reference_score(const TaskRecord& r) {
  auto count = [](const std::string& s) { return static_cast<double>(std::count(s.begin(), s.end(), ' ') + 1); };
  return 100.0 * count(r.reference) / count(r.oracle);
}

}  // namespace

TEST_CASE("task oracles are bijective and invertible") {
  for (auto kind : {TaskKind::copy, TaskKind::reverse, TaskKind::rot_k, TaskKind::dict_swap}) {
    TaskSpec spec;
    spec.kind = kind;
    Task task(spec);
    const auto recs = generate_records(task, 200, 5);
    std::set<std::string> images;
    for (const auto& r : recs) {
      CHECK(task.inverse(task.forward(r.source)) == r.source);
      images.insert(r.oracle);
    }
    CHECK(images.size() == recs.size());
  }
  TaskSpec rot;
  rot.kind = TaskKind::rot_k;
  rot.rot_k = 3;
  Task task(rot);
  CHECK(task.forward("abz xy") == "dec ab");
  CHECK(task.inverse("dec ab") == "abz xy");
}

TEST_CASE("dict_swap maps words then swaps neighbours") {
  Task task(TaskSpec{});
  const auto& lex = task.lexicon();
  const std::string s = lex[0] + " " + lex[1] + " " + lex[2];
  const std::string a = task.forward(lex[0]), b = task.forward(lex[1]), c = task.forward(lex[2]);
  CHECK(task.forward(s) == b + " " + a + " " + c);
  CHECK(std::all_of(a.begin(), a.end(), [](char ch) { return ch >= 'A' && ch <= 'Z'; }));
}

TEST_CASE("inverse direction records swap source and oracle") {
  TaskSpec spec;
  spec.directions = {{"en", "xx"}, {"xx", "en"}};
  Task task(spec);
  const auto recs = generate_records(task, 10, 1);
  CHECK(recs[0].direction == "en-xx");
  CHECK(recs[1].direction == "xx-en");
  for (const auto& r : recs) CHECK(task.oracle(r.source, r.direction) == r.oracle);
  CHECK(task.forward(recs[1].oracle) == recs[1].source);
}

TEST_CASE("rho zero leaves references equal to the oracle") {
  TaskSpec spec;
  spec.reference_deletion = 0;
  Task task(spec);
  for (const auto& r : generate_records(task, 500, 9)) CHECK(r.reference == r.oracle);
}

TEST_CASE("reference scores at rho 0.1 sit between 80 and 100") {
  Task task(TaskSpec{});
  const auto recs = generate_records(task, 10000, 21);
  double sim = 0, expected = 0;
  for (const auto& r : recs) {
    sim += cpo::prefdata::oracle_similarity(r.reference, r.oracle);
    expected += reference_score(r);
  }
  sim /= static_cast<double>(recs.size());
  expected /= static_cast<double>(recs.size());
  CHECK(sim > 80);
  CHECK(sim < 100);
  CHECK(sim == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(sim - 90.0) < 1.5);
}

TEST_CASE("corpus splits are deterministic and disjoint by source") {
  TaskSpec spec;
  spec.train = 300;
  spec.dev = 50;
  spec.test = 50;
  Task task(spec);
  const auto a = generate_corpus(task, 4), b = generate_corpus(task, 4);
  std::set<std::string> sources;
  for (const auto* split : {&a.train, &a.dev, &a.test}) {
    for (const auto& r : *split) sources.insert(r.source);
  }
  CHECK(sources.size() == 400);
  CHECK(a.test.back().reference == b.test.back().reference);
  CHECK(generate_corpus(task, 5).train[0].source != a.train[0].source);
  CHECK_THROWS_AS(generate_records(task, 0, 1), cpo::Error);
}

TEST_CASE("run config round-trips through JSON and rejects bad fields") {
  RunConfig c = tiny_config("runs/x");
  c.preferences.source_filter = {"reference", "system_b"};
  const nlohmann::json j = c;
  const RunConfig back = run_config_from_json(j);
  CHECK(nlohmann::json(back) == j);
  CHECK(back.source_filter() == cpo::prefdata::SourceFilter{Provenance::reference, Provenance::system_b});

  auto bad = j;
  bad["sft"]["batch_size"] = 0;
  CHECK_THROWS_WITH_AS(run_config_from_json(bad), doctest::Contains("batch_size"), cpo::Error);
  bad = j;
  bad["bogus"] = 1;
  CHECK_THROWS_WITH_AS(run_config_from_json(bad), doctest::Contains("bogus"), cpo::Error);
  bad = j;
  bad["variants"] = {"cpo", "magic"};
  CHECK_THROWS_AS(run_config_from_json(bad), cpo::Error);
  bad = j;
  bad["task"]["reference_deletion"] = 1.0;
  CHECK_THROWS_AS(run_config_from_json(bad), cpo::Error);
  CHECK_THROWS_WITH_AS(load_run_config("/nonexistent/cfg.json"), doctest::Contains("not found"), cpo::Error);

  // Defaults mirror the stated loss settings.
  const RunConfig d;
  CHECK(d.loss.beta == 0.1);
  CHECK(d.loss.lambda == 1.0);
  CHECK(d.task.train == 4000);
  CHECK(d.finetune.batch_size == 32);
  CHECK(d.finetune.warmup_ratio == 0.01);
  CHECK(cpo::objectives::parse_variant("sft") == cpo::objectives::Variant::nll);
}

TEST_CASE("learning-rate schedule warms up then decays to zero") {
  OptimizerConfig c;
  c.lr = 1.0;
  c.warmup_ratio = 0.1;
  CHECK(scheduled_lr(c, 0, 100) == doctest::Approx(0.1));
  CHECK(scheduled_lr(c, 9, 100) == doctest::Approx(1.0));
  CHECK(scheduled_lr(c, 10, 100) == doctest::Approx(1.0));
  CHECK(scheduled_lr(c, 55, 100) == doctest::Approx(0.5));
  CHECK(scheduled_lr(c, 99, 100) == doctest::Approx(1.0 / 90));
  c.warmup_ratio = 0;
  CHECK(scheduled_lr(c, 0, 4) == doctest::Approx(1.0));
  CHECK(steps_per_epoch(65, 32) == 3);
}

TEST_CASE("Adam minimizes a quadratic and divergence names the step") {
  Tensor w = Tensor::from({2}, {3.0, -2.0}, true);
  OptimizerConfig c;
  c.lr = 0.1;
  c.epochs = 200;
  c.batch_size = 1;
  c.warmup_ratio = 0;
  c.grad_clip = 0;
  const auto r = train({w}, 1, c, 1, [&](Tape& tape, std::span<const std::size_t>) {
    const Tensor target = Tensor::from({2}, {1.0, 1.0});
    const Tensor d = tape.sub(w, target);
    return BatchLoss{tape.sum(tape.mul(d, d))};
  });
  CHECK(r.steps == 200);
  CHECK(std::abs(w.at(0) - 1.0) < 1e-2);
  CHECK(std::abs(w.at(1) - 1.0) < 1e-2);

  Tensor u = Tensor::from({1}, {1.0}, true);
  OptimizerConfig d;
  d.batch_size = 1;
  d.epochs = 10;
  int n = 0;
  CHECK_THROWS_WITH_AS(train({u}, 1, d, 1,
                             [&](Tape& tape, std::span<const std::size_t>) {
                               ++n;
                               BatchLoss b;
                               b.total = n < 4 ? tape.sum(u) : Tensor::scalar(std::nan(""));
                               return b;
                             }),
                       doctest::Contains("step 3"), cpo::Error);
}

TEST_CASE("SFT lowers dev NLL, zero steps change nothing, reruns are identical") {
  const auto cfg = tiny_config(scratch("sft"));
  Task task(cfg.task);
  const auto corpus = generate_corpus(task, 1);

  const auto none = pretrain_sft(cfg, corpus.train, corpus.dev, 0);
  CHECK(none.train.steps == 0);
  CHECK(none.dev_nll_after == none.dev_nll_before);

  const auto a = pretrain_sft(cfg, corpus.train, corpus.dev);
  CHECK(a.train.steps == 12);
  CHECK(a.dev_nll_after < a.dev_nll_before);
  CHECK(a.checkpoint.base.frozen());
  const auto b = pretrain_sft(cfg, corpus.train, corpus.dev);
  CHECK(std::abs(a.dev_nll_after - b.dev_nll_after) <= 1e-6);
  CHECK(weights_sha256(a.checkpoint.base) == weights_sha256(b.checkpoint.base));
}

TEST_CASE("preferences from the model follow the oracle and sum to 100") {
  const auto cfg = tiny_config(scratch("prefs"));
  Task task(cfg.task);
  const auto corpus = generate_corpus(task, 2);
  const auto sft = pretrain_sft(cfg, corpus.train, corpus.dev);
  const auto build = build_preferences_from_model(sft.checkpoint, task, corpus.train, cfg.preferences.scorers, 0.8, {},
                                                  7, cfg.eval.max_new);
  CHECK(build.triplets.size() + build.decode_failures == corpus.train.size());
  REQUIRE(!build.dataset.pairs.empty());

  // Recount: whenever the oracle's score differs from both others, it wins.
  std::size_t distinct = 0, oracle_wins = 0;
  for (const auto& t : build.triplets) {
    const double o = t.score(Provenance::system_a);
    if (o == t.score(Provenance::reference) || o == t.score(Provenance::system_b)) continue;
    ++distinct;
    const auto pair = cpo::prefdata::select_pair(t);
    REQUIRE(pair.has_value());
    if (pair->prov_w == Provenance::system_a) ++oracle_wins;
  }
  CHECK(distinct > 0);
  CHECK(oracle_wins == distinct);

  const auto stats = cpo::prefdata::provenance_stats(build.dataset.pairs);
  double total = 0;
  for (double p : stats.percent) total += p;
  CHECK(std::abs(total - 100.0) <= 0.01);

  const auto again = build_preferences_from_model(sft.checkpoint, task, corpus.train, cfg.preferences.scorers, 0.8, {},
                                                  7, cfg.eval.max_new);
  CHECK(again.dataset.pairs.size() == build.dataset.pairs.size());
  CHECK(cpo::prefdata::to_json(again.dataset.pairs.back()) == cpo::prefdata::to_json(build.dataset.pairs.back()));
}

TEST_CASE("a perfect model with exact references yields only ties") {
  auto spec = TaskSpec{};
  spec.reference_deletion = 0;
  Task task(spec);
  std::vector<cpo::prefdata::TranslationTriplet> triplets;
  for (const auto& r : generate_records(task, 50, 3)) {
    cpo::prefdata::TranslationTriplet t;
    t.id = r.id;
    t.direction = r.direction;
    t.source = r.source;
    t.candidates = {cpo::prefdata::Candidate{r.reference, Provenance::reference},
                    cpo::prefdata::Candidate{r.oracle, Provenance::system_a},
                    cpo::prefdata::Candidate{r.oracle, Provenance::system_b}};
    triplets.push_back(t);
  }
  const auto build = rescore(triplets, task, cpo::prefdata::ScorerSpec{}, {});
  CHECK(build.dataset.pairs.empty());
  CHECK(build.dataset.stats.skipped_ties == 50);
}

TEST_CASE("fine-tuning touches adapters only and zero steps keep the base outputs") {
  const auto cfg = tiny_config(scratch("finetune"));
  Task task(cfg.task);
  const auto corpus = generate_corpus(task, 2);
  const auto sft = pretrain_sft(cfg, corpus.train, corpus.dev);
  const auto build = build_preferences_from_model(sft.checkpoint, task, corpus.train, cfg.preferences.scorers, 0.8, {},
                                                  7, cfg.eval.max_new);
  const auto& pairs = build.dataset.pairs;
  const auto& base = sft.checkpoint.base;
  const std::string before = weights_sha256(base);

  const auto zero = finetune(sft.checkpoint, pairs, {cpo::objectives::Variant::cpo, 0.1, 1.0}, cfg.finetune,
                             cfg.adapter, 1, 0);
  const auto plain = decode_outputs("a", base, nullptr, sft.checkpoint.vocabulary, corpus.test, 24);
  const auto adapted = decode_outputs("b", base, &zero.adapters, sft.checkpoint.vocabulary, corpus.test, 24);
  CHECK(plain.translations == adapted.translations);

  const auto cpo = finetune(sft.checkpoint, pairs, {cpo::objectives::Variant::cpo, 0.1, 1.0}, cfg.finetune,
                            cfg.adapter, 1);
  const auto dpo = finetune(sft.checkpoint, pairs, {cpo::objectives::Variant::dpo, 0.1, 1.0}, cfg.finetune,
                            cfg.adapter, 1);
  CHECK(cpo.base_sha_before == before);
  CHECK(cpo.base_sha_after == before);
  CHECK(dpo.base_sha_after == before);
  CHECK(weights_sha256(base) == before);
  CHECK(cpo.train.steps > 0);
  CHECK(dpo.policy_forwards == 2 * cpo.policy_forwards);
  CHECK(dpo.resident_models == 2);
  CHECK(cpo.resident_models == 1);
  CHECK(cpo.summary()["trajectory"].size() == cpo.train.steps);

  bool moved = false;
  for (const auto& [name, t] : cpo.adapters.named()) {
    for (double v : t.values()) moved = moved || v != 0.0;
  }
  CHECK(moved);
}

TEST_CASE("pipeline dry run writes nothing") {
  const auto dir = scratch("dry");
  PipelineOptions opts;
  opts.dry_run = true;
  const auto r = run_pipeline(tiny_config(dir), opts);
  CHECK(!fs::exists(dir));
  REQUIRE(r.plan.size() == 9);
  CHECK(r.plan.front() == "generate");
  CHECK(r.plan[3] == "finetune:sft-preferred");
  CHECK(r.plan.back() == "ablation:noised-dispreferred");
}

TEST_CASE("pipeline writes a complete run directory and reruns reproduce it") {
  const auto dir = scratch("full");
  const auto cfg = tiny_config(dir);
  const auto a = run_pipeline(cfg);
  for (const char* f : {"config.json", "manifest.json", "datasets/train.jsonl", "datasets/pairs.jsonl",
                        "datasets/triplets.jsonl", "checkpoints/sft.bin", "checkpoints/cpo.json", "reports/main.txt",
                        "reports/ablation-noised-dispreferred.txt"}) {
    CHECK_MESSAGE(fs::exists(dir / f), f);
  }
  const auto manifest = nlohmann::json::parse(cpo::read_text(dir / "manifest.json"));
  CHECK(manifest["status"] == "complete");
  CHECK(manifest["stages"].size() == 9);
  CHECK(manifest["datasets"]["train"]["git_sha1"].get<std::string>().size() == 40);
  CHECK(manifest["finetune"]["dpo"]["policy_forwards"].get<std::uint64_t>() ==
        2 * manifest["finetune"]["cpo"]["policy_forwards"].get<std::uint64_t>());
  const auto report = nlohmann::json::parse(cpo::read_text(dir / "reports/main.json"));
  CHECK(report["systems"].size() == 5);
  const std::string text = cpo::read_text(dir / "reports/main.txt");

  const auto b = run_pipeline(cfg);
  CHECK(cpo::read_text(dir / "reports/main.txt") == text);
  REQUIRE(a.report.has_value());
  REQUIRE(b.report.has_value());
  for (std::size_t s = 0; s < a.report->systems.size(); ++s) {
    for (std::size_t m = 0; m < a.report->metrics.size(); ++m) {
      CHECK(std::abs(a.report->systems[s].means[m] - b.report->systems[s].means[m]) <= 1e-6);
    }
  }

  // Ablations can be rerun from the directory.
  auto e = Experiment::open(dir);
  const auto loss = e.ablation("loss-components");
  CHECK(loss.systems.size() == 5);
  CHECK(loss.systems.back().system == "cpo");
}

TEST_CASE("a failing stage is named and leaves a manifest of completed stages") {
  const auto dir = scratch("fail");
  Experiment e(tiny_config(dir));
  e.stage("generate", [&] { e.generate(); });
  CHECK_THROWS_WITH_AS(e.stage("pretrain", [] { throw cpo::Error("diverged", "step 4: non-finite loss"); }),
                       doctest::Contains("stage 'pretrain'"), cpo::Error);
  const auto m = nlohmann::json::parse(cpo::read_text(dir / "manifest.json"));
  CHECK(m["status"] == "failed");
  CHECK(m["failed_stage"] == "pretrain");
  CHECK(m["stages"].size() == 1);
  CHECK(m["stages"][0]["name"] == "generate");
}

TEST_CASE("derived seeds differ by tag and index") {
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, std::uint64_t{0}) != derive_seed(1, std::uint64_t{1}));
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}
