#include "cpo/experiments/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cpo/common/error.hpp"
#include "cpo/common/jsonl.hpp"

namespace cpo::experiments {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw Error("config", where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error("config", where + ": unknown field '" + key + "'");
  }
}

}  // namespace

void OptimizerConfig::validate(const char* where) const {
  const std::string w(where);
  if (!(lr > 0) || !std::isfinite(lr)) throw Error("config", w + ".lr must be positive");
  if (batch_size < 1) throw Error("config", w + ".batch_size must be at least 1");
  if (epochs < 1) throw Error("config", w + ".epochs must be at least 1");
  if (!(warmup_ratio >= 0 && warmup_ratio < 1)) throw Error("config", w + ".warmup_ratio must lie in [0, 1)");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw Error("config", w + ": Adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw Error("config", w + ".eps must be positive");
  if (!(grad_clip >= 0)) throw Error("config", w + ".grad_clip must be nonnegative");
}

void RunConfig::validate() const {
  task.validate();
  auto m = model;
  if (m.vocab_size == 0) m.vocab_size = model::Vocabulary::default_charset().size();
  try {
    m.validate();
  } catch (const std::exception& e) {
    throw Error("config", std::string("model: ") + e.what());
  }
  if (adapter.rank < 1) throw Error("config", "adapter.rank must be at least 1");
  if (!(adapter.alpha > 0)) throw Error("config", "adapter.alpha must be positive");
  try {
    loss.validate();
  } catch (const std::exception& e) {
    throw Error("config", std::string("loss: ") + e.what());
  }
  sft.validate("sft");
  finetune.validate("finetune");
  preferences.scorers.validate(prefdata::ScorerRegistry::builtin());
  if (!(preferences.temperature > 0)) throw Error("config", "preferences.temperature must be positive");
  source_filter();
  noise.validate();
  const auto registry = prefdata::ScorerRegistry::builtin();
  if (eval.metrics.empty()) throw Error("config", "eval.metrics must not be empty");
  prefdata::ScorerSpec{eval.metrics}.validate(registry);
  if (std::find(eval.metrics.begin(), eval.metrics.end(), eval.metric) == eval.metrics.end()) {
    throw Error("config", "eval.metric '" + eval.metric + "' must be one of eval.metrics");
  }
  if (eval.max_new < 1) throw Error("config", "eval.max_new must be at least 1");
  if (variants.empty()) throw Error("config", "variants must not be empty");
  std::set<std::string> seen;
  for (const auto& v : variants) {
    try {
      objectives::parse_variant(v);
    } catch (const std::exception& e) {
      throw Error("config", e.what());
    }
    if (!seen.insert(v).second) throw Error("config", "variant '" + v + "' listed twice");
  }
  for (const auto& a : ablations) {
    if (std::find(kAblationKinds.begin(), kAblationKinds.end(), a) == kAblationKinds.end()) {
      throw Error("config", "unknown ablation '" + a + "'");
    }
  }
  if (run_dir.empty()) throw Error("config", "run_dir must not be empty");
  const std::size_t need = 2 * task.max_text_chars() + 16;
  if (m.max_seq_len < need) {
    throw Error("config", "model.max_seq_len " + std::to_string(m.max_seq_len) + " is shorter than the " +
                              std::to_string(need) + " tokens the task can produce");
  }
}

prefdata::SourceFilter RunConfig::source_filter() const {
  prefdata::SourceFilter f;
  for (const auto& name : preferences.source_filter) {
    try {
      f.insert(prefdata::parse_provenance(name));
    } catch (const std::exception& e) {
      throw Error("config", std::string("preferences.source_filter: ") + e.what());
    }
  }
  return f;
}

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"lr", c.lr},       {"batch_size", c.batch_size}, {"warmup_ratio", c.warmup_ratio}, {"epochs", c.epochs},
       {"beta1", c.beta1}, {"beta2", c.beta2},           {"eps", c.eps},                   {"grad_clip", c.grad_clip}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  reject_unknown(j, {"lr", "batch_size", "warmup_ratio", "epochs", "beta1", "beta2", "eps", "grad_clip"}, "optimizer");
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
  c.epochs = j.value("epochs", c.epochs);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"task", c.task},
       {"model", c.model},
       {"adapter", {{"rank", c.adapter.rank}, {"alpha", c.adapter.alpha}}},
       {"loss", {{"variant", objectives::variant_name(c.loss.variant)}, {"beta", c.loss.beta}, {"lambda", c.loss.lambda}}},
       {"sft", c.sft},
       {"finetune", c.finetune},
       {"preferences",
        {{"scorers", c.preferences.scorers.scorers},
         {"temperature", c.preferences.temperature},
         {"source_filter", c.preferences.source_filter}}},
       {"noise", {{"p_delete", c.noise.p_delete}, {"p_swap", c.noise.p_swap}}},
       {"eval", {{"metric", c.eval.metric}, {"metrics", c.eval.metrics}, {"max_new", c.eval.max_new}}},
       {"variants", c.variants},
       {"ablations", c.ablations},
       {"seed", c.seed},
       {"run_dir", c.run_dir}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"task", "model", "adapter", "loss", "sft", "finetune", "preferences", "noise", "eval", "variants",
                  "ablations", "seed", "run_dir"},
                 "config");
  RunConfig c;
  try {
    if (j.contains("task")) c.task = j.at("task").get<TaskSpec>();
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m, {"layers", "heads", "model_dim", "ff_dim", "max_seq_len", "vocab_size"}, "model");
      c.model.layers = m.value("layers", c.model.layers);
      c.model.heads = m.value("heads", c.model.heads);
      c.model.model_dim = m.value("model_dim", c.model.model_dim);
      c.model.ff_dim = m.value("ff_dim", c.model.ff_dim);
      c.model.max_seq_len = m.value("max_seq_len", c.model.max_seq_len);
      c.model.vocab_size = m.value("vocab_size", c.model.vocab_size);
    }
    if (j.contains("adapter")) {
      const auto& a = j.at("adapter");
      reject_unknown(a, {"rank", "alpha"}, "adapter");
      c.adapter.rank = a.value("rank", c.adapter.rank);
      c.adapter.alpha = a.value("alpha", c.adapter.alpha);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      reject_unknown(l, {"variant", "beta", "lambda"}, "loss");
      if (l.contains("variant")) c.loss.variant = objectives::parse_variant(l.at("variant").get<std::string>());
      c.loss.beta = l.value("beta", c.loss.beta);
      c.loss.lambda = l.value("lambda", c.loss.lambda);
    }
    if (j.contains("sft")) from_json(j.at("sft"), c.sft);
    if (j.contains("finetune")) from_json(j.at("finetune"), c.finetune);
    if (j.contains("preferences")) {
      const auto& p = j.at("preferences");
      reject_unknown(p, {"scorers", "temperature", "source_filter"}, "preferences");
      if (p.contains("scorers")) c.preferences.scorers.scorers = p.at("scorers").get<std::vector<std::string>>();
      c.preferences.temperature = p.value("temperature", c.preferences.temperature);
      if (p.contains("source_filter")) c.preferences.source_filter = p.at("source_filter").get<std::vector<std::string>>();
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      reject_unknown(n, {"p_delete", "p_swap"}, "noise");
      c.noise.p_delete = n.value("p_delete", c.noise.p_delete);
      c.noise.p_swap = n.value("p_swap", c.noise.p_swap);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      reject_unknown(e, {"metric", "metrics", "max_new"}, "eval");
      c.eval.metric = e.value("metric", c.eval.metric);
      if (e.contains("metrics")) c.eval.metrics = e.at("metrics").get<std::vector<std::string>>();
      c.eval.max_new = e.value("max_new", c.eval.max_new);
    }
    if (j.contains("variants")) c.variants = j.at("variants").get<std::vector<std::string>>();
    if (j.contains("ablations")) c.ablations = j.at("ablations").get<std::vector<std::string>>();
    c.seed = j.value("seed", c.seed);
    c.run_dir = j.value("run_dir", c.run_dir);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("config", e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("io", "config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config", path.string() + ": invalid JSON (" + e.what() + ")");
  }
  return run_config_from_json(j);
}

}  // namespace cpo::experiments
