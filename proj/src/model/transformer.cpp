#include "cpo/model/transformer.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace cpo::model {

void TransformerConfig::validate() const {
  if (layers == 0 || heads == 0 || model_dim == 0 || ff_dim == 0 || max_seq_len == 0 || vocab_size == 0) {
    throw std::invalid_argument("transformer config: all sizes must be positive");
  }
  if (model_dim % heads != 0) {
    throw std::invalid_argument("transformer config: model_dim " + std::to_string(model_dim) +
                                " not divisible by heads " + std::to_string(heads));
  }
}

void to_json(nlohmann::json& j, const TransformerConfig& c) {
  j = nlohmann::json{{"layers", c.layers},   {"heads", c.heads},           {"model_dim", c.model_dim},
                     {"ff_dim", c.ff_dim},   {"max_seq_len", c.max_seq_len}, {"vocab_size", c.vocab_size}};
}

void from_json(const nlohmann::json& j, TransformerConfig& c) {
  TransformerConfig d;
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.model_dim = j.value("model_dim", d.model_dim);
  c.ff_dim = j.value("ff_dim", d.ff_dim);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
}

namespace {

Tensor normal(std::mt19937_64& rng, compute::Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(compute::numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor filled(compute::Shape shape, double value) {
  std::vector<double> v(compute::numel(shape), value);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor copy_param(const Tensor& t) {
  Tensor c = t.clone();
  c.set_requires_grad(t.requires_grad());
  return c;
}

std::pair<std::size_t, std::size_t> site_dims(const TransformerConfig& c, AdapterSite site) {
  switch (site) {
    case AdapterSite::ff_in: return {c.model_dim, c.ff_dim};
    case AdapterSite::ff_out: return {c.ff_dim, c.model_dim};
    default: return {c.model_dim, c.model_dim};
  }
}

const Tensor& site_weight(const LayerParams& layer, AdapterSite site) {
  switch (site) {
    case AdapterSite::query: return layer.wq;
    case AdapterSite::key: return layer.wk;
    case AdapterSite::value: return layer.wv;
    case AdapterSite::output: return layer.wo;
    case AdapterSite::ff_in: return layer.w1;
    case AdapterSite::ff_out: return layer.w2;
  }
  throw std::logic_error("unknown adapter site");
}

}  // namespace

const char* site_name(AdapterSite site) {
  switch (site) {
    case AdapterSite::query: return "query";
    case AdapterSite::key: return "key";
    case AdapterSite::value: return "value";
    case AdapterSite::output: return "output";
    case AdapterSite::ff_in: return "ff_in";
    case AdapterSite::ff_out: return "ff_out";
  }
  return "?";
}

ModelParams ModelParams::init(const TransformerConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.model_dim, f = config.ff_dim;
  const double in_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double in_f = 1.0 / std::sqrt(static_cast<double>(f));
  const double residual = 1.0 / std::sqrt(2.0 * static_cast<double>(config.layers));

  ModelParams p;
  p.config = config;
  p.token_embedding = normal(rng, {config.vocab_size, d}, 0.02);
  p.position_embedding = normal(rng, {config.max_seq_len, d}, 0.02);
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerParams layer;
    layer.ln1_gain = filled({d}, 1.0);
    layer.ln1_bias = filled({d}, 0.0);
    layer.wq = normal(rng, {d, d}, in_d);
    layer.bq = filled({d}, 0.0);
    layer.wk = normal(rng, {d, d}, in_d);
    layer.bk = filled({d}, 0.0);
    layer.wv = normal(rng, {d, d}, in_d);
    layer.bv = filled({d}, 0.0);
    layer.wo = normal(rng, {d, d}, in_d * residual);
    layer.bo = filled({d}, 0.0);
    layer.ln2_gain = filled({d}, 1.0);
    layer.ln2_bias = filled({d}, 0.0);
    layer.w1 = normal(rng, {d, f}, in_d);
    layer.b1 = filled({f}, 0.0);
    layer.w2 = normal(rng, {f, d}, in_f * residual);
    layer.b2 = filled({d}, 0.0);
    p.layers.push_back(std::move(layer));
  }
  p.final_gain = filled({d}, 1.0);
  p.final_bias = filled({d}, 0.0);
  p.w_out = normal(rng, {d, config.vocab_size}, in_d);
  p.b_out = filled({config.vocab_size}, 0.0);
  return p;
}

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("position_embedding", position_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerParams& L = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    for (auto& [name, t] : std::vector<NamedTensor>{
             {"ln1_gain", L.ln1_gain}, {"ln1_bias", L.ln1_bias}, {"wq", L.wq}, {"bq", L.bq},
             {"wk", L.wk},             {"bk", L.bk},             {"wv", L.wv}, {"bv", L.bv},
             {"wo", L.wo},             {"bo", L.bo},             {"ln2_gain", L.ln2_gain},
             {"ln2_bias", L.ln2_bias}, {"w1", L.w1},             {"b1", L.b1}, {"w2", L.w2},
             {"b2", L.b2}}) {
      out.emplace_back(p + name, t);
    }
  }
  out.emplace_back("final_gain", final_gain);
  out.emplace_back("final_bias", final_bias);
  out.emplace_back("w_out", w_out);
  out.emplace_back("b_out", b_out);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t.numel();
  return n;
}

void ModelParams::set_frozen(bool frozen) {
  for (auto& [name, t] : named()) {
    Tensor handle = t;
    handle.set_requires_grad(!frozen);
  }
}

bool ModelParams::frozen() const {
  for (const auto& [name, t] : named())
    if (t.requires_grad()) return false;
  return true;
}

ModelParams ModelParams::clone() const {
  ModelParams c;
  c.config = config;
  c.token_embedding = copy_param(token_embedding);
  c.position_embedding = copy_param(position_embedding);
  for (const LayerParams& L : layers) {
    c.layers.push_back(LayerParams{copy_param(L.ln1_gain), copy_param(L.ln1_bias), copy_param(L.wq),
                                   copy_param(L.bq),       copy_param(L.wk),       copy_param(L.bk),
                                   copy_param(L.wv),       copy_param(L.bv),       copy_param(L.wo),
                                   copy_param(L.bo),       copy_param(L.ln2_gain), copy_param(L.ln2_bias),
                                   copy_param(L.w1),       copy_param(L.b1),       copy_param(L.w2),
                                   copy_param(L.b2)});
  }
  c.final_gain = copy_param(final_gain);
  c.final_bias = copy_param(final_bias);
  c.w_out = copy_param(w_out);
  c.b_out = copy_param(b_out);
  return c;
}

AdapterParams AdapterParams::init(const TransformerConfig& config, std::size_t rank, double alpha,
                                  std::uint64_t seed) {
  config.validate();
  if (rank == 0) throw std::invalid_argument("adapter rank must be positive");
  if (!(alpha > 0)) throw std::invalid_argument("adapter alpha must be positive");
  std::mt19937_64 rng(seed);
  AdapterParams a;
  a.rank = rank;
  a.alpha = alpha;
  for (std::size_t l = 0; l < config.layers; ++l) {
    std::array<LowRankPair, kAdapterSites> sites;
    for (std::size_t s = 0; s < kAdapterSites; ++s) {
      const auto [in, out] = site_dims(config, static_cast<AdapterSite>(s));
      sites[s].a = normal(rng, {in, rank}, 1.0 / std::sqrt(static_cast<double>(in)));
      sites[s].b = filled({rank, out}, 0.0);
    }
    a.layers.push_back(std::move(sites));
  }
  return a;
}

std::vector<NamedTensor> AdapterParams::named() const {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t s = 0; s < kAdapterSites; ++s) {
      const std::string p = "adapters." + std::to_string(l) + "." + site_name(static_cast<AdapterSite>(s));
      out.emplace_back(p + ".a", layers[l][s].a);
      out.emplace_back(p + ".b", layers[l][s].b);
    }
  }
  return out;
}

std::size_t AdapterParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t.numel();
  return n;
}

AdapterParams AdapterParams::clone() const {
  AdapterParams c;
  c.rank = rank;
  c.alpha = alpha;
  for (const auto& sites : layers) {
    std::array<LowRankPair, kAdapterSites> copy;
    for (std::size_t s = 0; s < kAdapterSites; ++s) copy[s] = {copy_param(sites[s].a), copy_param(sites[s].b)};
    c.layers.push_back(std::move(copy));
  }
  return c;
}

void AdapterParams::check_compatible(const TransformerConfig& config) const {
  if (layers.size() != config.layers) {
    throw std::invalid_argument("adapters cover " + std::to_string(layers.size()) + " layers, model has " +
                                std::to_string(config.layers));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t s = 0; s < kAdapterSites; ++s) {
      const auto [in, out] = site_dims(config, static_cast<AdapterSite>(s));
      const LowRankPair& pair = layers[l][s];
      if (pair.a.shape() != compute::Shape{in, rank} || pair.b.shape() != compute::Shape{rank, out}) {
        throw std::invalid_argument("adapter " + std::to_string(l) + "." + site_name(static_cast<AdapterSite>(s)) +
                                    " has factors " + compute::shape_string(pair.a.shape()) + " x " +
                                    compute::shape_string(pair.b.shape()) + ", expected rank " +
                                    std::to_string(rank) + " for a " + std::to_string(in) + "x" +
                                    std::to_string(out) + " map");
      }
    }
  }
}

ModelParams merge_adapters(const ModelParams& base, const AdapterParams& adapters) {
  adapters.check_compatible(base.config);
  ModelParams merged = base.clone();
  const double s = adapters.scaling();
  for (std::size_t l = 0; l < merged.layers.size(); ++l) {
    for (std::size_t site = 0; site < kAdapterSites; ++site) {
      Tensor w = site_weight(merged.layers[l], static_cast<AdapterSite>(site));
      const LowRankPair& pair = adapters.layers[l][site];
      const std::size_t in = pair.a.dim(0), r = adapters.rank, out = pair.b.dim(1);
      auto wv = w.mutable_values();
      auto av = pair.a.values();
      auto bv = pair.b.values();
      for (std::size_t i = 0; i < in; ++i)
        for (std::size_t j = 0; j < out; ++j) {
          double acc = 0;
          for (std::size_t k = 0; k < r; ++k) acc += av[i * r + k] * bv[k * out + j];
          wv[i * out + j] += s * acc;
        }
    }
  }
  return merged;
}

namespace {

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b, const AdapterParams* adapters,
              std::size_t layer, AdapterSite site) {
  Tensor y = tape.add_row(tape.matmul(x, w), b);
  if (adapters == nullptr) return y;
  const LowRankPair& pair = adapters->layers[layer][static_cast<std::size_t>(site)];
  return tape.add(y, tape.scale(tape.matmul(tape.matmul(x, pair.a), pair.b), adapters->scaling()));
}

}  // namespace

Tensor Policy::hidden(Tape& tape, std::span<const int> ids) const {
  const ModelParams& p = *base_;
  const TransformerConfig& c = p.config;
  if (ids.empty()) throw compute::ShapeError("forward: empty input");
  if (ids.size() > c.max_seq_len) {
    throw std::length_error("forward: length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                              std::to_string(c.max_seq_len));
  }
  if (adapters_ != nullptr) adapters_->check_compatible(c);
  forwards_.fetch_add(1, std::memory_order_relaxed);

  Tensor h = tape.add(tape.embedding(p.token_embedding, ids), tape.slice_rows(p.position_embedding, 0, ids.size()));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const LayerParams& L = p.layers[l];
    Tensor a = tape.layer_norm(h, L.ln1_gain, L.ln1_bias);
    Tensor q = linear(tape, a, L.wq, L.bq, adapters_, l, AdapterSite::query);
    Tensor k = linear(tape, a, L.wk, L.bk, adapters_, l, AdapterSite::key);
    Tensor v = linear(tape, a, L.wv, L.bv, adapters_, l, AdapterSite::value);
    Tensor att = tape.causal_attention(q, k, v, c.heads);
    h = tape.add(h, linear(tape, att, L.wo, L.bo, adapters_, l, AdapterSite::output));
    Tensor m = tape.layer_norm(h, L.ln2_gain, L.ln2_bias);
    Tensor ff = tape.gelu(linear(tape, m, L.w1, L.b1, adapters_, l, AdapterSite::ff_in));
    h = tape.add(h, linear(tape, ff, L.w2, L.b2, adapters_, l, AdapterSite::ff_out));
  }
  return tape.layer_norm(h, p.final_gain, p.final_bias);
}

Tensor Policy::project(Tape& tape, const Tensor& hidden) const {
  return tape.add_row(tape.matmul(hidden, base_->w_out), base_->b_out);
}

Tensor Policy::logits(Tape& tape, std::span<const int> ids) const { return project(tape, hidden(tape, ids)); }

Tensor sequence_logprob(Tape& tape, const Policy& policy, const TokenSequence& seq) {
  if (seq.prompt_len == 0) throw std::invalid_argument("sequence_logprob: prompt must hold at least BOS");
  if (seq.prompt_len > seq.ids.size()) throw std::invalid_argument("sequence_logprob: prompt_len exceeds length");
  if (seq.ids.size() > policy.config().max_seq_len) {
    throw std::length_error("sequence_logprob: length " + std::to_string(seq.ids.size()) +
                              " exceeds max_seq_len " + std::to_string(policy.config().max_seq_len));
  }
  const std::size_t n_target = seq.ids.size() - seq.prompt_len;
  if (n_target == 0) return Tensor::scalar(0.0);
  std::span<const int> inputs(seq.ids.data(), seq.ids.size() - 1);
  Tensor h = policy.hidden(tape, inputs);
  // Row t predicts token t+1; only rows predicting target tokens are projected.
  Tensor rows = tape.slice_rows(h, seq.prompt_len - 1, n_target);
  Tensor logp = tape.log_softmax(policy.project(tape, rows));
  return tape.sum(tape.gather_rows(logp, seq.target()));
}

Tensor sequence_logprob(Tape& tape, const Policy& policy, const TokenSequence& prompt, std::span<const int> target) {
  return sequence_logprob(tape, policy, join(prompt, target));
}

double sequence_logprob_value(const Policy& policy, const TokenSequence& seq) {
  Tape tape(false);
  return sequence_logprob(tape, policy, seq).item();
}

}  // namespace cpo::model
