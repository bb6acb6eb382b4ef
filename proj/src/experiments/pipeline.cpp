#include "cpo/experiments/pipeline.hpp"

#include <algorithm>
#include <sstream>

#include "cpo/common/error.hpp"
#include "cpo/common/hash.hpp"
#include "cpo/common/jsonl.hpp"
#include "cpo/experiments/seeds.hpp"
#include "cpo/prefdata/noise.hpp"

namespace cpo::experiments {

namespace fs = std::filesystem;
using evalharness::MetricReport;
using evalharness::SystemScores;
using objectives::Variant;
using prefdata::PreferencePair;

namespace {

template <typename T>
std::vector<nlohmann::json> records_of(const std::vector<T>& items) {
  std::vector<nlohmann::json> out;
  out.reserve(items.size());
  for (const auto& i : items) out.push_back(to_json(i));
  return out;
}

std::string pairs_digest(const std::vector<PreferencePair>& pairs) {
  std::string text;
  for (const auto& p : pairs) text += prefdata::to_json(p).dump() + "\n";
  return sha256_hex(text);
}

nlohmann::json means_json(const SystemScores& s) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t m = 0; m < s.metrics.size(); ++m) j[s.metrics[m]] = s.means[m];
  return j;
}

std::string filter_label(prefdata::Provenance excluded) { return "cpo-excl-" + prefdata::provenance_name(excluded); }

std::string scorer_label(const prefdata::ScorerSpec& spec) {
  std::string out = "cpo-";
  for (std::size_t i = 0; i < spec.scorers.size(); ++i) out += (i ? "+" : "") + spec.scorers[i];
  return out;
}

}  // namespace

std::string system_name(const std::string& variant) {
  const Variant v = objectives::parse_variant(variant);
  if (variant == "sft") return "sft-preferred";
  switch (v) {
    case Variant::nll: return "nll-only";
    case Variant::dpo: return "dpo";
    case Variant::prefer_only: return "prefer-only";
    case Variant::cpo: return "cpo";
    case Variant::dpo_bc: return "dpo-bc";
  }
  return variant;
}

std::vector<std::string> stage_plan(const RunConfig& config) {
  std::vector<std::string> plan{"generate", "pretrain", "build-preferences"};
  for (const auto& v : config.variants) plan.push_back("finetune:" + system_name(v));
  plan.push_back("evaluate");
  plan.push_back("report");
  for (const auto& a : config.ablations) plan.push_back("ablation:" + a);
  return plan;
}

Experiment::Experiment(RunConfig config, PipelineOptions options)
    : config_(std::move(config)),
      options_(std::move(options)),
      task_(config_.task),
      thresholds_(options_.thresholds ? evalharness::ThresholdTable::load(*options_.thresholds)
                                      : evalharness::ThresholdTable::builtin()),
      started_(std::chrono::steady_clock::now()) {
  config_.validate();
  manifest_ = {{"format", "cpo-run/1"},
               {"config", config_},
               {"status", "running"},
               {"stages", nlohmann::json::array()},
               {"datasets", nlohmann::json::object()},
               {"checkpoints", nlohmann::json::object()},
               {"optimizer", {{"sft", config_.sft}, {"finetune", config_.finetune}}},
               {"metrics", nlohmann::json::object()},
               {"finetune", nlohmann::json::object()},
               {"ablations", nlohmann::json::object()}};
}

fs::path Experiment::path(const std::string& relative) const { return fs::path(config_.run_dir) / relative; }

void Experiment::log(const std::string& line) const {
  if (options_.log) *options_.log << line << std::endl;
}

void Experiment::write_dataset(const std::string& name, const std::vector<nlohmann::json>& records) {
  const std::string rel = "datasets/" + name + ".jsonl";
  write_jsonl(path(rel), records);
  written_.push_back(path(rel));
  manifest_["datasets"][name] = {
      {"path", rel}, {"records", records.size()}, {"git_sha1", git_blob_sha1(read_text(path(rel)))}};
}

void Experiment::write_manifest(const std::string& status) {
  manifest_["status"] = status;
  manifest_["wall_time_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  write_text(path("manifest.json"), manifest_.dump(2) + "\n");
  if (std::find(written_.begin(), written_.end(), path("manifest.json")) == written_.end()) {
    written_.push_back(path("manifest.json"));
  }
}

void Experiment::stage(const std::string& name, const std::function<void()>& body) {
  log("stage " + name);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body();
  } catch (const std::exception& e) {
    manifest_["failed_stage"] = name;
    manifest_["error"] = e.what();
    write_manifest("failed");
    const auto* err = dynamic_cast<const Error*>(&e);
    throw Error(err ? err->code() : "stage-failed", "stage '" + name + "': " + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest_["stages"].push_back({{"name", name}, {"seconds", secs}});
  write_manifest("running");
}

void Experiment::generate() {
  corpus_ = generate_corpus(task_, derive_seed(config_.seed, "corpus"));
  write_text(path("config.json"), nlohmann::json(config_).dump(2) + "\n");
  written_.push_back(path("config.json"));
  write_dataset("train", records_of(corpus_.train));
  write_dataset("dev", records_of(corpus_.dev));
  write_dataset("test", records_of(corpus_.test));
}

void Experiment::pretrain() {
  auto r = pretrain_sft(config_, corpus_.train, corpus_.dev, options_.sft_steps);
  sft_ = std::move(r.checkpoint);
  model::save_checkpoint(path("checkpoints/sft"), sft_);
  written_.push_back(model::checkpoint_blob(path("checkpoints/sft")));
  written_.push_back(model::checkpoint_manifest(path("checkpoints/sft")));
  manifest_["checkpoints"]["sft"] = "checkpoints/sft";
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& s : r.train.trajectory) losses.push_back(s.loss);
  manifest_["sft"] = {{"steps", r.train.steps},
                      {"dev_nll_before", r.dev_nll_before},
                      {"dev_nll_after", r.dev_nll_after},
                      {"loss_trajectory", losses}};
  log("  dev NLL " + std::to_string(r.dev_nll_before) + " -> " + std::to_string(r.dev_nll_after));
}

void Experiment::build_preferences() {
  prefs_ = build_preferences_from_model(sft_, task_, corpus_.train, config_.preferences.scorers,
                                        config_.preferences.temperature, config_.source_filter(),
                                        derive_seed(config_.seed, "preferences"), config_.eval.max_new);
  write_dataset("triplets", records_of(prefs_.triplets));
  write_dataset("pairs", records_of(prefs_.dataset.pairs));
  const auto& st = prefs_.dataset.stats;
  nlohmann::json j = {{"triplets", st.triplets},
                      {"pairs", st.pairs},
                      {"skipped_ties", st.skipped_ties},
                      {"skipped_identical", st.skipped_identical},
                      {"decode_failures", prefs_.decode_failures}};
  if (!prefs_.dataset.pairs.empty()) {
    const auto ps = prefdata::provenance_stats(prefs_.dataset.pairs);
    nlohmann::json share = nlohmann::json::object();
    for (auto p : prefdata::kAllProvenances) share[prefdata::provenance_name(p)] = ps.percent[static_cast<std::size_t>(p)];
    j["preferred_share"] = share;
    j["preferred_share_text"] = ps.render();
    log("  " + std::to_string(st.pairs) + " pairs, preferred share " + ps.render());
  }
  manifest_["preferences"] = j;
}

SystemScores Experiment::score_outputs(const evalharness::SystemOutputs& outputs) const {
  const auto examples = eval_examples(corpus_.test);
  return evalharness::evaluate(outputs, examples, prefdata::ScorerSpec{config_.eval.metrics},
                               prefdata::ScorerRegistry::builtin());
}

const SystemScores& Experiment::base_scores() {
  auto it = scores_.find(kBaseSystem);
  if (it != scores_.end()) return it->second;
  auto outputs = decode_outputs(kBaseSystem, sft_.base, nullptr, sft_.vocabulary, corpus_.test, config_.eval.max_new);
  std::vector<nlohmann::json> recs;
  for (const auto& r : corpus_.test) recs.push_back({{"id", r.id}, {"translation", outputs.translations.at(r.id)}});
  write_dataset(std::string("outputs-") + kBaseSystem, recs);
  auto s = score_outputs(outputs);
  manifest_["metrics"][kBaseSystem] = means_json(s);
  return scores_.emplace(kBaseSystem, std::move(s)).first->second;
}

const SystemScores& Experiment::reference_scores() {
  auto it = scores_.find(kReferenceSystem);
  if (it != scores_.end()) return it->second;
  auto s = score_outputs(reference_outputs(corpus_.test));
  manifest_["metrics"][kReferenceSystem] = means_json(s);
  return scores_.emplace(kReferenceSystem, std::move(s)).first->second;
}

const SystemScores& Experiment::finetuned(const std::string& system, Variant variant,
                                          const std::vector<PreferencePair>& pairs) {
  if (auto it = scores_.find(system); it != scores_.end()) return it->second;
  std::ostringstream key;
  key << objectives::variant_name(variant) << '|' << config_.loss.beta << '|' << config_.loss.lambda << '|'
      << pairs_digest(pairs);
  if (auto it = finetune_keys_.find(key.str()); it != finetune_keys_.end()) {
    log("  " + system + " reuses " + it->second);
    SystemScores copy = scores_.at(it->second);
    copy.system = system;
    manifest_["metrics"][system] = means_json(copy);
    manifest_["finetune"][system] = {{"same_as", it->second}};
    return scores_.emplace(system, std::move(copy)).first->second;
  }

  objectives::LossConfig loss = config_.loss;
  loss.variant = variant;
  auto r = finetune(sft_, pairs, loss, config_.finetune, config_.adapter, derive_seed(config_.seed, "finetune"),
                    options_.finetune_steps);
  model::Checkpoint ck;
  ck.base = sft_.base;
  ck.adapters = r.adapters;
  ck.vocabulary = sft_.vocabulary;
  ck.seed = config_.seed;
  ck.steps = r.train.steps;
  ck.extra = {{"stage", "finetune"}, {"variant", objectives::variant_name(variant)}};
  const std::string stem = "checkpoints/" + system;
  model::save_checkpoint(path(stem), ck);
  written_.push_back(model::checkpoint_blob(path(stem)));
  written_.push_back(model::checkpoint_manifest(path(stem)));
  manifest_["checkpoints"][system] = stem;
  auto summary = r.summary();
  summary["variant"] = objectives::variant_name(variant);
  manifest_["finetune"][system] = summary;

  auto outputs = decode_outputs(system, sft_.base, &r.adapters, sft_.vocabulary, corpus_.test, config_.eval.max_new);
  std::vector<nlohmann::json> recs;
  for (const auto& rec : corpus_.test) recs.push_back({{"id", rec.id}, {"translation", outputs.translations.at(rec.id)}});
  write_dataset("outputs-" + system, recs);
  auto s = score_outputs(outputs);
  manifest_["metrics"][system] = means_json(s);
  finetune_keys_.emplace(key.str(), system);
  std::ostringstream line;
  line << "  " << system << ": " << config_.eval.metric << " "
       << s.means[static_cast<std::size_t>(std::find(s.metrics.begin(), s.metrics.end(), config_.eval.metric) -
                                           s.metrics.begin())];
  log(line.str());
  return scores_.emplace(system, std::move(s)).first->second;
}

MetricReport Experiment::report_of(const std::vector<std::string>& systems) const {
  std::vector<SystemScores> rows;
  for (const auto& name : systems) rows.push_back(scores_.at(name));
  return evalharness::build_report(std::move(rows), thresholds_, std::string(kBaseSystem),
                                   std::string(kReferenceSystem));
}

MetricReport Experiment::main_report() {
  std::vector<std::string> systems{kReferenceSystem, kBaseSystem};
  base_scores();
  reference_scores();
  for (const auto& v : config_.variants) {
    const auto name = system_name(v);
    finetuned(name, objectives::parse_variant(v), prefs_.dataset.pairs);
    systems.push_back(name);
  }
  return report_of(systems);
}

MetricReport Experiment::ablation(const std::string& kind) {
  base_scores();
  reference_scores();
  std::vector<std::string> systems{kReferenceSystem, kBaseSystem};
  const auto& pairs = prefs_.dataset.pairs;

  if (kind == "loss-components") {
    for (const char* v : {"prefer-only", "nll-only", "cpo"}) {
      finetuned(system_name(v), objectives::parse_variant(v), pairs);
      systems.push_back(system_name(v));
    }
  } else if (kind == "data-components") {
    finetuned("cpo", Variant::cpo, pairs);
    systems.push_back("cpo");
    for (auto excluded : {prefdata::Provenance::system_a, prefdata::Provenance::system_b}) {
      prefdata::SourceFilter filter;
      for (auto p : prefdata::kAllProvenances) {
        if (p != excluded) filter.insert(p);
      }
      const auto ds = prefdata::build_dataset(prefs_.triplets, filter);
      const std::string name = filter_label(excluded);
      write_dataset("pairs-" + name, records_of(ds.pairs));
      finetuned(name, Variant::cpo, ds.pairs);
      systems.push_back(name);
    }
  } else if (kind == "scorer-choice") {
    for (const auto& spec : {prefdata::ScorerSpec{{"oracle-sim"}}, prefdata::ScorerSpec{{"chrf"}},
                             prefdata::ScorerSpec{{"oracle-sim", "chrf"}}}) {
      const auto build = rescore(prefs_.triplets, task_, spec, config_.source_filter());
      const std::string name = scorer_label(spec);
      write_dataset("pairs-" + name, records_of(build.dataset.pairs));
      finetuned(name, Variant::cpo, build.dataset.pairs);
      systems.push_back(name);
    }
  } else if (kind == "noised-dispreferred") {
    finetuned("cpo", Variant::cpo, pairs);
    auto noised = prefdata::noise_dispreferred(pairs, config_.noise, derive_seed(config_.seed, "noise"));
    const auto before = noised.size();
    std::erase_if(noised, [](const PreferencePair& p) { return p.preferred == p.dispreferred; });
    manifest_["ablations"]["noised-dispreferred-dropped-identical"] = before - noised.size();
    write_dataset("pairs-noised", records_of(noised));
    finetuned("cpo-noised", Variant::cpo, noised);
    systems.push_back("cpo");
    systems.push_back("cpo-noised");
  } else {
    throw Error("config", "unknown ablation '" + kind + "'");
  }

  auto report = report_of(systems);
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : report.systems) j[s.system] = means_json(s);
  manifest_["ablations"][kind] = j;
  return report;
}

void Experiment::write_report(const std::string& name, const MetricReport& report) {
  write_text(path("reports/" + name + ".txt"), evalharness::render_report(report));
  write_text(path("reports/" + name + ".json"), evalharness::report_json(report).dump(2) + "\n");
  written_.push_back(path("reports/" + name + ".txt"));
  written_.push_back(path("reports/" + name + ".json"));
}

Experiment Experiment::open(const fs::path& run_dir, PipelineOptions options) {
  auto config = load_run_config(run_dir / "config.json");
  config.run_dir = run_dir.string();
  Experiment e(std::move(config), std::move(options));
  if (fs::exists(run_dir / "manifest.json")) e.manifest_ = nlohmann::json::parse(read_text(run_dir / "manifest.json"));
  e.corpus_.train = read_jsonl_as(run_dir / "datasets/train.jsonl", &task_record_from_json);
  e.corpus_.dev = read_jsonl_as(run_dir / "datasets/dev.jsonl", &task_record_from_json);
  e.corpus_.test = read_jsonl_as(run_dir / "datasets/test.jsonl", &task_record_from_json);
  e.sft_ = model::load_checkpoint(run_dir / "checkpoints/sft");
  e.sft_.base.set_frozen(true);
  e.prefs_.triplets = read_jsonl_as(run_dir / "datasets/triplets.jsonl", &prefdata::triplet_from_json);
  e.prefs_.dataset = prefdata::build_dataset(e.prefs_.triplets, e.config_.source_filter());
  return e;
}

PipelineResult run_pipeline(const RunConfig& config, const PipelineOptions& options) {
  config.validate();
  PipelineResult result;
  result.plan = stage_plan(config);
  if (options.dry_run) return result;

  Experiment e(config, options);
  e.stage("generate", [&] { e.generate(); });
  e.stage("pretrain", [&] { e.pretrain(); });
  e.stage("build-preferences", [&] { e.build_preferences(); });
  for (const auto& v : config.variants) {
    const auto name = system_name(v);
    e.stage("finetune:" + name,
            [&] { e.finetuned(name, objectives::parse_variant(v), e.preferences().dataset.pairs); });
  }
  e.stage("evaluate", [&] {
    e.base_scores();
    e.reference_scores();
  });
  e.stage("report", [&] {
    result.report = e.main_report();
    e.write_report("main", *result.report);
  });
  for (const auto& a : config.ablations) {
    e.stage("ablation:" + a, [&] {
      auto r = e.ablation(a);
      e.write_report("ablation-" + a, r);
      result.ablations.emplace(a, std::move(r));
    });
  }
  e.write_manifest("complete");
  result.manifest = e.manifest();
  result.written = e.written();
  return result;
}

}  // namespace cpo::experiments
