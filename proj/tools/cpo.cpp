// Command-line entry point: one subcommand per pipeline stage or verifier.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "cpo/common/error.hpp"
#include "cpo/common/jsonl.hpp"
#include "cpo/evalharness/evaluate.hpp"
#include "cpo/evalharness/human.hpp"
#include "cpo/evalharness/thresholds.hpp"
#include "cpo/experiments/pipeline.hpp"
#include "cpo/experiments/seeds.hpp"
#include "cpo/experiments/stages.hpp"
#include "cpo/objectives/gradcheck.hpp"
#include "cpo/objectives/losses.hpp"
#include "cpo/prefdata/human.hpp"
#include "cpo/prefdata/noise.hpp"
#include "cpo/prefdata/selection.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cpo;
using namespace cpo::experiments;

namespace {

/// Raised for flag problems that should print usage.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  bool json = false;
  bool dry_run = false;
};

/// Collects human-readable lines or a JSON record, and performs (or, on a dry
/// run, only announces) file writes.
class Output {
 public:
  explicit Output(const Globals& g) : g_(g) {}

  void line(const std::string& text) {
    if (!g_.json) std::cout << text << "\n";
  }
  json& record() { return record_; }

  void write(const fs::path& path, const std::string& content) {
    if (g_.dry_run) {
      line("would write: " + path.string());
      record_["would_write"].push_back(path.string());
      return;
    }
    write_text(path, content);
    wrote(path);
  }
  void write_records(const fs::path& path, const std::vector<json>& records) {
    std::string text;
    for (const auto& r : records) text += r.dump() + "\n";
    write(path, text);
  }
  void wrote(const fs::path& path) {
    line("wrote: " + path.string());
    record_["written"].push_back(path.string());
  }
  void finish() {
    if (g_.json) std::cout << record_.dump(2) << "\n";
  }

 private:
  const Globals& g_;
  json record_ = json::object();
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(digits);
  o << v;
  return o.str();
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw Error("schema", path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

std::vector<json> read_records(const fs::path& path) {
  std::vector<json> out;
  read_jsonl(path, [&](const json& j, std::size_t) { out.push_back(j); });
  return out;
}

template <typename T>
std::vector<json> to_records(const std::vector<T>& items) {
  std::vector<json> out;
  for (const auto& i : items) out.push_back(to_json(i));
  return out;
}

/// Seed from the flag, else from the config file, else a usage error.
std::uint64_t require_seed(const CLI::App* cmd, std::optional<std::uint64_t> flag, const std::string& config_path) {
  if (flag) return *flag;
  if (!config_path.empty()) {
    const json j = read_json_file(config_path);
    if (j.contains("seed")) return j.at("seed").get<std::uint64_t>();
  }
  throw UsageError("--seed is required for " + cmd->get_name());
}

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

void require_config(const CLI::App* cmd, const std::string& path) {
  if (path.empty()) throw UsageError("--config is required for " + cmd->get_name());
}

evalharness::ThresholdTable thresholds_from(const std::string& path) {
  return path.empty() ? evalharness::ThresholdTable::builtin() : evalharness::ThresholdTable::load(path);
}

void print_report(Output& out, const evalharness::MetricReport& report, const std::string& key = "report") {
  out.record()[key] = evalharness::report_json(report);
  std::istringstream text(evalharness::render_report(report));
  for (std::string l; std::getline(text, l);) out.line(l);
}

// gen-data ------------------------------------------------------------------

struct GenDataArgs {
  std::string config, out, kind;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> train, dev, test;
  std::optional<double> rho;
};

void gen_data(const CLI::App* cmd, const GenDataArgs& a, Output& out) {
  RunConfig c = config_or_default(a.config);
  const std::uint64_t seed = require_seed(cmd, a.seed, a.config);
  if (!a.kind.empty()) c.task.kind = parse_task_kind(a.kind);
  if (a.train) c.task.train = *a.train;
  if (a.dev) c.task.dev = *a.dev;
  if (a.test) c.task.test = *a.test;
  if (a.rho) c.task.reference_deletion = *a.rho;
  const Task task(c.task);
  const Corpus corpus = generate_corpus(task, derive_seed(seed, "corpus"));
  const fs::path dir(a.out);
  out.write_records(dir / "train.jsonl", to_records(corpus.train));
  out.write_records(dir / "dev.jsonl", to_records(corpus.dev));
  out.write_records(dir / "test.jsonl", to_records(corpus.test));
  out.record()["records"] = {{"train", corpus.train.size()}, {"dev", corpus.dev.size()}, {"test", corpus.test.size()}};
  out.line("records: train " + std::to_string(corpus.train.size()) + ", dev " + std::to_string(corpus.dev.size()) +
           ", test " + std::to_string(corpus.test.size()));
}

// score -----------------------------------------------------------------------

struct ScoreArgs {
  std::string config, triplets, out, scorers = "oracle-sim,chrf";
};

void score(const ScoreArgs& a, Output& out) {
  const RunConfig c = config_or_default(a.config);
  const Task task(c.task);
  const auto spec = prefdata::parse_scorer_spec(a.scorers);
  std::vector<prefdata::TranslationTriplet> triplets;
  read_jsonl(a.triplets, [&](const json& j, std::size_t) {
    auto t = prefdata::triplet_from_json(j);
    task.direction_index(t.direction);
    triplets.push_back(std::move(t));
  });
  const auto build = rescore(triplets, task, spec, {});
  double sums[3] = {0, 0, 0};
  for (const auto& t : build.triplets) {
    for (auto p : prefdata::kAllProvenances) sums[static_cast<int>(p)] += t.score(p);
  }
  out.write_records(a.out, to_records(build.triplets));
  const double n = std::max<double>(1, static_cast<double>(build.triplets.size()));
  for (auto p : prefdata::kAllProvenances) {
    const double mean = sums[static_cast<int>(p)] / n;
    out.record()["mean_scores"][prefdata::provenance_name(p)] = mean;
    out.line("mean " + prefdata::provenance_name(p) + ": " + fixed(mean));
  }
  out.record()["triplets"] = build.triplets.size();
}

// build-prefs -----------------------------------------------------------------

struct BuildPrefsArgs {
  std::string config, triplets, checkpoint, records, pairwise, out, triplets_out, filter, scorers;
  std::optional<std::uint64_t> seed;
  std::optional<double> temperature;
};

void report_dataset(Output& out, const prefdata::Dataset& ds) {
  const auto& st = ds.stats;
  out.record()["stats"] = {{"triplets", st.triplets},
                           {"pairs", st.pairs},
                           {"skipped_ties", st.skipped_ties},
                           {"skipped_identical", st.skipped_identical}};
  out.line("pairs: " + std::to_string(st.pairs) + " of " + std::to_string(st.triplets) + " triplets (" +
           std::to_string(st.skipped_ties) + " tied, " + std::to_string(st.skipped_identical) + " identical)");
  if (ds.pairs.empty()) return;
  const auto ps = prefdata::provenance_stats(ds.pairs);
  for (auto p : prefdata::kAllProvenances) {
    out.record()["preferred_share"][prefdata::provenance_name(p)] = ps.percent[static_cast<std::size_t>(p)];
  }
  out.line("preferred share (reference / system_a / system_b): " + ps.render());
}

void build_prefs(const CLI::App* cmd, const BuildPrefsArgs& a, Output& out) {
  const int modes = !a.triplets.empty() + !a.checkpoint.empty() + !a.pairwise.empty();
  if (modes != 1) throw UsageError("give exactly one of --triplets, --checkpoint or --pairwise");
  const RunConfig c = config_or_default(a.config);
  prefdata::SourceFilter filter = c.source_filter();
  if (!a.filter.empty()) {
    filter.clear();
    for (const auto& name : split_list(a.filter)) filter.insert(prefdata::parse_provenance(name));
  }

  if (!a.pairwise.empty()) {
    const auto records = read_jsonl_as(a.pairwise, &prefdata::pairwise_from_json);
    const auto ingest = prefdata::ingest_pairwise(records);
    out.record()["judgments"] = {{"a", ingest.a_wins}, {"b", ingest.b_wins}, {"tie", ingest.ties}};
    out.line("judgments: a " + std::to_string(ingest.a_wins) + ", b " + std::to_string(ingest.b_wins) + ", tie " +
             std::to_string(ingest.ties));
    out.write_records(a.out, to_records(ingest.pairs));
    return;
  }

  if (!a.triplets.empty()) {
    const auto triplets = read_jsonl_as(a.triplets, &prefdata::triplet_from_json);
    for (const auto& t : triplets) {
      if (!t.scores) throw Error("schema", "triplet '" + t.id + "' is not scored; run score first");
    }
    const auto ds = prefdata::build_dataset(triplets, filter);
    report_dataset(out, ds);
    out.write_records(a.out, to_records(ds.pairs));
    return;
  }

  if (a.records.empty()) throw UsageError("--checkpoint needs --records");
  const std::uint64_t seed = require_seed(cmd, a.seed, a.config);
  const Task task(c.task);
  auto ck = model::load_checkpoint(a.checkpoint);
  const auto records = read_jsonl_as(a.records, &task_record_from_json);
  const auto spec = a.scorers.empty() ? c.preferences.scorers : prefdata::parse_scorer_spec(a.scorers);
  const auto build = build_preferences_from_model(ck, task, records, spec, a.temperature.value_or(c.preferences.temperature),
                                                  filter, seed, c.eval.max_new);
  out.record()["decode_failures"] = build.decode_failures;
  out.line("decode failures: " + std::to_string(build.decode_failures));
  report_dataset(out, build.dataset);
  if (!a.triplets_out.empty()) out.write_records(a.triplets_out, to_records(build.triplets));
  out.write_records(a.out, to_records(build.dataset.pairs));
}

// noise -----------------------------------------------------------------------

struct NoiseArgs {
  std::string pairs, out;
  std::optional<std::uint64_t> seed;
  double p_delete = 0.15, p_swap = 0.3;
  bool keep_identical = false;
};

void noise(const CLI::App* cmd, const NoiseArgs& a, Output& out) {
  const std::uint64_t seed = require_seed(cmd, a.seed, "");
  const auto pairs = read_jsonl_as(a.pairs, &prefdata::pair_from_json);
  auto noised = prefdata::noise_dispreferred(pairs, {a.p_delete, a.p_swap}, seed);
  const std::size_t before = noised.size();
  if (!a.keep_identical) std::erase_if(noised, [](const auto& p) { return p.preferred == p.dispreferred; });
  out.record()["pairs"] = noised.size();
  out.record()["dropped_identical"] = before - noised.size();
  out.line("pairs: " + std::to_string(noised.size()) + " (" + std::to_string(before - noised.size()) +
           " identical dropped)");
  out.write_records(a.out, to_records(noised));
}

// train -----------------------------------------------------------------------

struct TrainArgs {
  std::string config, out, train, dev;
  std::optional<std::uint64_t> seed, steps;
};

void train_cmd(const CLI::App* cmd, const TrainArgs& a, const Globals& g, Output& out) {
  require_config(cmd, a.config);
  RunConfig c = load_run_config(a.config);
  c.seed = require_seed(cmd, a.seed, a.config);
  const fs::path stem = a.out.empty() ? fs::path(c.run_dir) / "checkpoints/sft" : fs::path(a.out);
  if (g.dry_run) {
    out.line("would train " + std::to_string(c.sft.epochs) + " epochs at lr " + fixed(c.sft.lr, 6));
    out.write(model::checkpoint_blob(stem), "");
    out.write(model::checkpoint_manifest(stem), "");
    return;
  }
  Corpus corpus;
  if (a.train.empty()) {
    corpus = generate_corpus(Task(c.task), derive_seed(c.seed, "corpus"));
  } else {
    corpus.train = read_jsonl_as(a.train, &task_record_from_json);
    if (!a.dev.empty()) corpus.dev = read_jsonl_as(a.dev, &task_record_from_json);
  }
  const auto r = pretrain_sft(c, corpus.train, corpus.dev, a.steps);
  model::save_checkpoint(stem, r.checkpoint);
  out.record()["steps"] = r.train.steps;
  out.record()["dev_nll_before"] = r.dev_nll_before;
  out.record()["dev_nll_after"] = r.dev_nll_after;
  out.line("steps: " + std::to_string(r.train.steps));
  out.line("dev NLL: " + fixed(r.dev_nll_before, 4) + " -> " + fixed(r.dev_nll_after, 4));
  out.wrote(model::checkpoint_blob(stem));
  out.wrote(model::checkpoint_manifest(stem));
}

// finetune --------------------------------------------------------------------

struct FinetuneArgs {
  std::string config, checkpoint, pairs, out, variant = "cpo";
  std::optional<std::uint64_t> seed, steps, epochs;
  double beta = 0.1, lambda = 1.0;
  std::optional<double> lr;
};

void finetune_cmd(const CLI::App* cmd, const FinetuneArgs& a, const Globals& g, Output& out) {
  const RunConfig c = config_or_default(a.config);
  const std::uint64_t seed = require_seed(cmd, a.seed, a.config);
  objectives::LossConfig loss{objectives::parse_variant(a.variant), a.beta, a.lambda};
  loss.validate();
  OptimizerConfig opt = c.finetune;
  if (a.lr) opt.lr = *a.lr;
  if (a.epochs) opt.epochs = *a.epochs;
  opt.validate("finetune");
  if (g.dry_run) {
    out.line("would fine-tune " + objectives::variant_name(loss.variant) + " from " + a.checkpoint);
    out.write(model::checkpoint_blob(a.out), "");
    out.write(model::checkpoint_manifest(a.out), "");
    return;
  }
  auto ck = model::load_checkpoint(a.checkpoint);
  ck.base.set_frozen(true);
  const auto pairs = read_jsonl_as(a.pairs, &prefdata::pair_from_json);
  const auto r = finetune(ck, pairs, loss, opt, c.adapter, derive_seed(seed, "finetune"), a.steps);
  model::Checkpoint result;
  result.base = ck.base;
  result.adapters = r.adapters;
  result.vocabulary = ck.vocabulary;
  result.seed = seed;
  result.steps = r.train.steps;
  result.extra = {{"stage", "finetune"}, {"variant", objectives::variant_name(loss.variant)}};
  model::save_checkpoint(a.out, result);
  auto summary = r.summary();
  summary.erase("trajectory");
  out.record()["finetune"] = summary;
  out.line("variant: " + objectives::variant_name(loss.variant) + ", pairs " + std::to_string(r.pairs) + ", steps " +
           std::to_string(r.train.steps));
  if (!r.train.trajectory.empty()) out.line("final loss: " + fixed(r.train.trajectory.back().loss, 6));
  out.line("model evaluations: " + std::to_string(r.policy_forwards) + " (reference " +
           std::to_string(r.reference_forwards) + "), resident models " + std::to_string(r.resident_models));
  out.line("base weights unchanged: " + std::string(r.base_sha_before == r.base_sha_after ? "yes" : "no"));
  out.wrote(model::checkpoint_blob(a.out));
  out.wrote(model::checkpoint_manifest(a.out));
}

// evaluate --------------------------------------------------------------------

struct EvaluateArgs {
  std::string corpus, metrics = "oracle-sim,chrf", baseline, reference, thresholds, out, ratings;
  std::vector<std::string> systems, checkpoints;
  std::size_t max_new = 64;
};

std::pair<std::string, std::string> name_value(const std::string& s, const char* flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
    throw UsageError(std::string(flag) + " expects NAME=PATH, got '" + s + "'");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

void evaluate_cmd(const EvaluateArgs& a, Output& out) {
  if (!a.ratings.empty()) {
    const auto ratings = read_jsonl_as(a.ratings, &evalharness::human_rating_from_json);
    const auto summary = evalharness::aggregate_human(ratings);
    out.record()["human"] = evalharness::human_json(summary);
    std::istringstream text(evalharness::render_human(summary));
    for (std::string l; std::getline(text, l);) out.line(l);
    if (!a.out.empty()) out.write(a.out, evalharness::render_human(summary));
    return;
  }
  if (a.corpus.empty()) throw UsageError("--corpus is required");
  if (a.systems.empty() && a.checkpoints.empty()) throw UsageError("give at least one --system or --checkpoint");
  const auto corpus = read_jsonl_as(a.corpus, &evalharness::eval_example_from_json);
  const auto registry = prefdata::ScorerRegistry::builtin();
  const auto spec = prefdata::parse_scorer_spec(a.metrics);
  std::vector<evalharness::SystemScores> scores;
  for (const auto& s : a.systems) {
    const auto [name, path] = name_value(s, "--system");
    const auto records = read_records(path);
    scores.push_back(evalharness::evaluate(evalharness::outputs_from_records(name, records), corpus, spec, registry));
  }
  for (const auto& s : a.checkpoints) {
    const auto [name, stem] = name_value(s, "--checkpoint");
    const auto ck = model::load_checkpoint(stem);
    std::vector<TaskRecord> recs;
    for (const auto& e : corpus) recs.push_back({e.id, e.direction, e.source, e.oracle, e.oracle});
    const auto outputs =
        decode_outputs(name, ck.base, ck.adapters ? &*ck.adapters : nullptr, ck.vocabulary, recs, a.max_new);
    scores.push_back(evalharness::evaluate(outputs, corpus, spec, registry));
  }
  auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::string>(s); };
  const auto report = evalharness::build_report(scores, thresholds_from(a.thresholds), opt(a.baseline), opt(a.reference));
  print_report(out, report);
  if (!a.out.empty()) out.write(a.out, evalharness::render_report(report));
}

// report ----------------------------------------------------------------------

struct ReportArgs {
  std::string run_dir, name = "main", thresholds, out;
};

void report_cmd(const ReportArgs& a, Output& out) {
  const fs::path dir(a.run_dir);
  const json saved = read_json_file(dir / "reports" / (a.name + ".json"));
  const RunConfig c = load_run_config(dir / "config.json");
  const auto test = read_jsonl_as(dir / "datasets/test.jsonl", &task_record_from_json);
  const auto examples = eval_examples(test);
  const auto registry = prefdata::ScorerRegistry::builtin();
  const prefdata::ScorerSpec spec{c.eval.metrics};
  std::vector<evalharness::SystemScores> scores;
  for (const auto& row : saved.at("systems")) {
    const std::string name = row.at("system").get<std::string>();
    const auto outputs = name == kReferenceSystem
                             ? reference_outputs(test)
                             : evalharness::outputs_from_records(name, read_records(dir / "datasets" / ("outputs-" + name + ".jsonl")));
    scores.push_back(evalharness::evaluate(outputs, examples, spec, registry));
  }
  auto opt = [&](const char* key) {
    return saved.contains(key) ? std::optional<std::string>(saved.at(key).get<std::string>()) : std::nullopt;
  };
  const auto report = evalharness::build_report(scores, thresholds_from(a.thresholds), opt("baseline"), opt("reference"));
  print_report(out, report);
  if (!a.out.empty()) out.write(a.out, evalharness::render_report(report));
}

// ablate ----------------------------------------------------------------------

struct AblateArgs {
  std::string run_dir, thresholds;
  std::vector<std::string> kinds;
  std::optional<std::uint64_t> finetune_steps;
};

void ablate(const AblateArgs& a, const Globals& g, Output& out) {
  const RunConfig c = load_run_config(fs::path(a.run_dir) / "config.json");
  const auto kinds = a.kinds.empty() ? c.ablations : a.kinds;
  if (kinds.empty()) throw UsageError("no ablation kinds given and none configured");
  for (const auto& k : kinds) {
    if (std::find(kAblationKinds.begin(), kAblationKinds.end(), k) == kAblationKinds.end()) {
      throw Error("config", "unknown ablation '" + k + "'");
    }
  }
  if (g.dry_run) {
    for (const auto& k : kinds) {
      out.write(fs::path(a.run_dir) / "reports" / ("ablation-" + k + ".txt"), "");
      out.write(fs::path(a.run_dir) / "reports" / ("ablation-" + k + ".json"), "");
    }
    return;
  }
  PipelineOptions opts;
  opts.finetune_steps = a.finetune_steps;
  if (!a.thresholds.empty()) opts.thresholds = a.thresholds;
  if (!g.json) opts.log = &std::cerr;
  auto e = Experiment::open(a.run_dir, opts);
  for (const auto& k : kinds) {
    evalharness::MetricReport r;
    e.stage("ablation:" + k, [&] {
      r = e.ablation(k);
      e.write_report("ablation-" + k, r);
    });
    out.line("ablation " + k + ":");
    print_report(out, r, "ablation:" + k);
  }
  e.write_manifest("complete");
  for (const auto& p : e.written()) out.wrote(p);
}

// verify-theorem / gradcheck ------------------------------------------------

struct TheoremArgs {
  std::uint64_t samples = 100000;
  std::optional<std::uint64_t> seed;
};

int verify_theorem(const CLI::App* cmd, const TheoremArgs& a, Output& out) {
  const std::uint64_t seed = require_seed(cmd, a.seed, "");
  const auto r = objectives::verify_theorem1(a.samples, seed);
  double tight = 0;
  for (double beta : {0.1, 0.5, 1.0, 2.0}) {
    for (double pw : {0.1, 0.5, 0.9}) {
      for (double pl : {0.05, 0.5, 0.99}) {
        const auto s = objectives::theorem1_sides(pw, pl, 1.0, beta);
        tight = std::max(tight, std::abs(s.lhs - s.rhs));
      }
    }
  }
  out.record() = {{"samples", r.samples}, {"violations", r.violations}, {"max_excess", r.max_excess},
                  {"tightness_gap_at_q1", tight}};
  out.line("samples: " + std::to_string(r.samples));
  out.line("violations: " + std::to_string(r.violations));
  std::ostringstream o;
  o << "max lhs - rhs: " << r.max_excess << "\ntightness gap at q_l = 1: " << tight;
  out.line(o.str());
  return r.violations == 0 ? 0 : 1;
}

struct GradcheckArgs {
  std::string variant = "all";
  std::size_t points = 20;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
};

int gradcheck(const GradcheckArgs& a, Output& out) {
  std::vector<std::string> names;
  if (a.variant == "all") {
    names = {"nll", "dpo", "prefer_only", "cpo", "dpo_bc"};
  } else {
    names = split_list(a.variant);
  }
  double worst = 0;
  for (const auto& n : names) {
    const auto v = objectives::parse_variant(n);
    const auto r = objectives::gradcheck_variant(v, a.points, a.seed);
    worst = std::max(worst, r.max_relative_error);
    out.record()["variants"][objectives::variant_name(v)] = {{"points", r.points},
                                                             {"max_relative_error", r.max_relative_error}};
    std::ostringstream o;
    o << objectives::variant_name(v) << ": max relative error " << r.max_relative_error << " over " << r.points
      << " points";
    out.line(o.str());
  }
  std::ostringstream o;
  o << "max relative error: " << worst;
  out.line(o.str());
  out.record()["max_relative_error"] = worst;
  out.record()["tolerance"] = a.tolerance;
  return worst <= a.tolerance ? 0 : 1;
}

// pipeline --------------------------------------------------------------------

struct PipelineArgs {
  std::string config, thresholds;
  std::optional<std::uint64_t> seed, sft_steps, finetune_steps;
};

void pipeline(const CLI::App* cmd, const PipelineArgs& a, const Globals& g, Output& out) {
  require_config(cmd, a.config);
  RunConfig c = load_run_config(a.config);
  c.seed = require_seed(cmd, a.seed, a.config);
  PipelineOptions opts;
  opts.dry_run = g.dry_run;
  opts.sft_steps = a.sft_steps;
  opts.finetune_steps = a.finetune_steps;
  if (!a.thresholds.empty()) opts.thresholds = a.thresholds;
  if (!g.json) opts.log = &std::cerr;
  const auto r = run_pipeline(c, opts);
  out.record()["plan"] = r.plan;
  out.line("run directory: " + c.run_dir);
  out.line("stages:");
  for (std::size_t i = 0; i < r.plan.size(); ++i) out.line("  " + std::to_string(i + 1) + ". " + r.plan[i]);
  if (g.dry_run) return;
  if (r.report) print_report(out, *r.report);
  for (const auto& [kind, rep] : r.ablations) {
    out.line("ablation " + kind + ":");
    print_report(out, rep, "ablation:" + kind);
  }
  for (const auto& p : r.written) out.wrote(p);
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates many short-lived buffers of a few hundred kilobytes;
  // keeping them on the heap avoids an mmap/munmap pair per tensor.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif

  CLI::App app{"Contrastive preference optimization toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_flag("--json", g.json, "Print machine-readable JSON instead of text");
  app.add_flag("--dry-run", g.dry_run, "Validate inputs and print what would be written; write nothing");

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate train/dev/test corpora for the synthetic task");
  gen->add_option("--config", gd.config, "Run config (JSON); its task section is used")->check(CLI::ExistingFile);
  gen->add_option("--out", gd.out, "Output directory")->required();
  gen->add_option("--seed", gd.seed, "Random seed");
  gen->add_option("--kind", gd.kind, "Task kind: copy, reverse, rot_k, dict_swap");
  gen->add_option("--train", gd.train, "Training records");
  gen->add_option("--dev", gd.dev, "Dev records");
  gen->add_option("--test", gd.test, "Test records");
  gen->add_option("--rho", gd.rho, "Reference word-deletion rate");

  ScoreArgs sc;
  auto* scr = app.add_subcommand("score", "Score translation triplets");
  scr->add_option("--config", sc.config, "Run config (JSON) defining the task")->check(CLI::ExistingFile);
  scr->add_option("--triplets", sc.triplets, "Triplets JSONL")->required()->check(CLI::ExistingFile);
  scr->add_option("--scorers", sc.scorers, "Comma-separated scorer ids")->capture_default_str();
  scr->add_option("--out", sc.out, "Scored triplets JSONL")->required();

  BuildPrefsArgs bp;
  auto* bps = app.add_subcommand("build-prefs", "Select preference pairs from triplets, a model, or human judgments");
  bps->add_option("--config", bp.config, "Run config (JSON)")->check(CLI::ExistingFile);
  bps->add_option("--triplets", bp.triplets, "Scored triplets JSONL")->check(CLI::ExistingFile);
  bps->add_option("--checkpoint", bp.checkpoint, "SFT checkpoint stem to sample candidates from");
  bps->add_option("--records", bp.records, "Task records JSONL (with --checkpoint)")->check(CLI::ExistingFile);
  bps->add_option("--pairwise", bp.pairwise, "Human pairwise judgments JSONL")->check(CLI::ExistingFile);
  bps->add_option("--filter", bp.filter, "Comma-separated provenances to keep");
  bps->add_option("--scorers", bp.scorers, "Comma-separated scorer ids (with --checkpoint)");
  bps->add_option("--temperature", bp.temperature, "Sampling temperature (with --checkpoint)");
  bps->add_option("--seed", bp.seed, "Random seed (with --checkpoint)");
  bps->add_option("--triplets-out", bp.triplets_out, "Also write the scored triplets");
  bps->add_option("--out", bp.out, "Preference pairs JSONL")->required();

  NoiseArgs na;
  auto* noi = app.add_subcommand("noise", "Replace dis-preferred sides with noised copies of the preferred side");
  noi->add_option("--pairs", na.pairs, "Preference pairs JSONL")->required()->check(CLI::ExistingFile);
  noi->add_option("--out", na.out, "Output pairs JSONL")->required();
  noi->add_option("--seed", na.seed, "Random seed");
  noi->add_option("--p-delete", na.p_delete, "Word deletion probability")->capture_default_str();
  noi->add_option("--p-swap", na.p_swap, "Adjacent swap probability")->capture_default_str();
  noi->add_flag("--keep-identical", na.keep_identical, "Keep pairs whose noised side equals the preferred side");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Supervised pretraining on source -> reference");
  trn->add_option("--config", ta.config, "Run config (JSON)")->check(CLI::ExistingFile);
  trn->add_option("--seed", ta.seed, "Random seed (default: the config's)");
  trn->add_option("--train", ta.train, "Training records JSONL (default: generated from the config)");
  trn->add_option("--dev", ta.dev, "Dev records JSONL");
  trn->add_option("--steps", ta.steps, "Stop after this many optimizer steps");
  trn->add_option("--out", ta.out, "Checkpoint stem (default: <run_dir>/checkpoints/sft)");

  FinetuneArgs fa;
  auto* ft = app.add_subcommand("finetune", "Train adapters on preference pairs");
  ft->add_option("--config", fa.config, "Run config (JSON) for optimizer and adapter settings")->check(CLI::ExistingFile);
  ft->add_option("--checkpoint", fa.checkpoint, "Base checkpoint stem")->required();
  ft->add_option("--pairs", fa.pairs, "Preference pairs JSONL")->required()->check(CLI::ExistingFile);
  ft->add_option("--variant", fa.variant, "sft, dpo, cpo, dpo-bc, prefer-only, nll-only")->capture_default_str();
  ft->add_option("--beta", fa.beta, "Preference temperature")->capture_default_str();
  ft->add_option("--lambda", fa.lambda, "Weight of the NLL term")->capture_default_str();
  ft->add_option("--seed", fa.seed, "Random seed");
  ft->add_option("--lr", fa.lr, "Learning rate");
  ft->add_option("--epochs", fa.epochs, "Epochs");
  ft->add_option("--steps", fa.steps, "Stop after this many optimizer steps");
  ft->add_option("--out", fa.out, "Output checkpoint stem")->required();

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score system outputs, or aggregate human ratings");
  ev->add_option("--corpus", ea.corpus, "Evaluation corpus JSONL")->check(CLI::ExistingFile);
  ev->add_option("--system", ea.systems, "NAME=outputs.jsonl (repeatable)");
  ev->add_option("--checkpoint", ea.checkpoints, "NAME=checkpoint stem to decode greedily (repeatable)");
  ev->add_option("--metrics", ea.metrics, "Comma-separated scorer ids")->capture_default_str();
  ev->add_option("--baseline", ea.baseline, "System the deltas are taken against");
  ev->add_option("--reference", ea.reference, "System the win ratios are taken against");
  ev->add_option("--thresholds", ea.thresholds, "Threshold table JSON")->check(CLI::ExistingFile);
  ev->add_option("--max-new", ea.max_new, "Decode length cap")->capture_default_str();
  ev->add_option("--ratings", ea.ratings, "Human ratings JSONL")->check(CLI::ExistingFile);
  ev->add_option("--out", ea.out, "Also write the text report here");

  ReportArgs ra;
  auto* rep = app.add_subcommand("report", "Rebuild a report of a run directory from its saved outputs");
  rep->add_option("--run-dir", ra.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--name", ra.name, "Report name, e.g. main or ablation-loss-components")->capture_default_str();
  rep->add_option("--thresholds", ra.thresholds, "Threshold table JSON")->check(CLI::ExistingFile);
  rep->add_option("--out", ra.out, "Also write the text report here");

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "Run ablations on a run directory");
  abl->add_option("--run-dir", aa.run_dir, "Run directory with SFT checkpoint and triplets")
      ->required()
      ->check(CLI::ExistingDirectory);
  abl->add_option("--kind", aa.kinds, "loss-components, data-components, scorer-choice, noised-dispreferred");
  abl->add_option("--thresholds", aa.thresholds, "Threshold table JSON")->check(CLI::ExistingFile);
  abl->add_option("--finetune-steps", aa.finetune_steps, "Cap fine-tuning steps");

  TheoremArgs th;
  auto* vt = app.add_subcommand("verify-theorem", "Monte-Carlo check of the preference-loss upper bound");
  vt->add_option("--samples", th.samples, "Samples")->capture_default_str();
  vt->add_option("--seed", th.seed, "Random seed");

  GradcheckArgs gc;
  auto* gck = app.add_subcommand("gradcheck", "Finite-difference check of loss gradients");
  gck->add_option("--variant", gc.variant, "Loss variant(s), comma-separated, or all")->capture_default_str();
  gck->add_option("--points", gc.points, "Random points per variant")->capture_default_str();
  gck->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
  gck->add_option("--tolerance", gc.tolerance, "Largest accepted relative error")->capture_default_str();

  PipelineArgs pa;
  auto* pip = app.add_subcommand("pipeline", "Generate, pretrain, build preferences, fine-tune, evaluate, report");
  pip->add_option("--config", pa.config, "Run config (JSON)")->check(CLI::ExistingFile);
  pip->add_option("--seed", pa.seed, "Random seed (default: the config's)");
  pip->add_option("--thresholds", pa.thresholds, "Threshold table JSON")->check(CLI::ExistingFile);
  pip->add_option("--sft-steps", pa.sft_steps, "Cap SFT steps");
  pip->add_option("--finetune-steps", pa.finetune_steps, "Cap fine-tuning steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto parsed = app.get_subcommands();
    std::cerr << (parsed.empty() ? app.help() : parsed.back()->help()) << "\nerror: usage: " << e.what() << "\n";
    return 2;
  }

  CLI::App* cmd = app.get_subcommands().front();
  Output out(g);
  int status = 0;
  try {
    if (cmd == gen) gen_data(cmd, gd, out);
    else if (cmd == scr) score(sc, out);
    else if (cmd == bps) build_prefs(cmd, bp, out);
    else if (cmd == noi) noise(cmd, na, out);
    else if (cmd == trn) train_cmd(cmd, ta, g, out);
    else if (cmd == ft) finetune_cmd(cmd, fa, g, out);
    else if (cmd == ev) evaluate_cmd(ea, out);
    else if (cmd == rep) report_cmd(ra, out);
    else if (cmd == abl) ablate(aa, g, out);
    else if (cmd == vt) status = verify_theorem(cmd, th, out);
    else if (cmd == gck) status = gradcheck(gc, out);
    else if (cmd == pip) pipeline(cmd, pa, g, out);
  } catch (const UsageError& e) {
    std::cerr << cmd->help() << "\nerror: usage: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  out.finish();
  return status;
}
