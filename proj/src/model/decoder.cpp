#include "cpo/model/decoder.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace cpo::model {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;

RowMat to_matrix(const Tensor& t) {
  return Eigen::Map<const RowMat>(t.values().data(), static_cast<Eigen::Index>(t.dim(0)),
                                  static_cast<Eigen::Index>(t.dim(1)));
}

RowVec to_vector(const Tensor& t) {
  return Eigen::Map<const RowVec>(t.values().data(), static_cast<Eigen::Index>(t.numel()));
}

RowVec layer_norm(const RowVec& x, const RowVec& gain, const RowVec& bias) {
  const double n = static_cast<double>(x.size());
  const double mu = x.sum() / n;
  const RowVec c = x.array() - mu;
  const double var = c.squaredNorm() / n;
  return (c.array() * (1.0 / std::sqrt(var + 1e-5)) * gain.array() + bias.array()).matrix();
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440)); }

struct LayerWeights {
  RowVec ln1_gain, ln1_bias, bq, bk, bv, bo, ln2_gain, ln2_bias, b1, b2;
  RowMat wq, wk, wv, wo, w1, w2;
};

}  // namespace

struct Decoder::Weights {
  TransformerConfig config;
  RowMat token_embedding, position_embedding, w_out;
  RowVec final_gain, final_bias, b_out;
  std::vector<LayerWeights> layers;

  struct Cache {
    std::vector<RowMat> keys, values;
    std::size_t length = 0;
  };

  Cache make_cache() const {
    Cache c;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      c.keys.emplace_back(config.max_seq_len, config.model_dim);
      c.values.emplace_back(config.max_seq_len, config.model_dim);
    }
    return c;
  }

  RowVec step(int token, Cache& cache) const {
    const std::size_t pos = cache.length;
    if (pos >= config.max_seq_len) throw std::length_error("decoder: sequence exceeds max_seq_len");
    if (token < 0 || static_cast<std::size_t>(token) >= config.vocab_size) {
      throw std::invalid_argument("decoder: token id " + std::to_string(token) + " outside vocabulary");
    }
    const auto p = static_cast<Eigen::Index>(pos);
    const std::size_t head_dim = config.model_dim / config.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    RowVec h = token_embedding.row(token) + position_embedding.row(p);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const LayerWeights& L = layers[l];
      const RowVec a = layer_norm(h, L.ln1_gain, L.ln1_bias);
      const RowVec q = a * L.wq + L.bq;
      cache.keys[l].row(p) = a * L.wk + L.bk;
      cache.values[l].row(p) = a * L.wv + L.bv;
      RowVec att(static_cast<Eigen::Index>(config.model_dim));
      for (std::size_t hd = 0; hd < config.heads; ++hd) {
        const auto off = static_cast<Eigen::Index>(hd * head_dim);
        const auto hdim = static_cast<Eigen::Index>(head_dim);
        Eigen::VectorXd scores = cache.keys[l].block(0, off, p + 1, hdim) * q.segment(off, hdim).transpose();
        scores *= inv_sqrt;
        const double mx = scores.maxCoeff();
        scores = (scores.array() - mx).exp();
        scores /= scores.sum();
        att.segment(off, hdim) = scores.transpose() * cache.values[l].block(0, off, p + 1, hdim);
      }
      h += att * L.wo + L.bo;
      const RowVec m = layer_norm(h, L.ln2_gain, L.ln2_bias);
      RowVec ff = m * L.w1 + L.b1;
      ff = ff.unaryExpr(&gelu);
      h += ff * L.w2 + L.b2;
    }
    cache.length = pos + 1;
    return layer_norm(h, final_gain, final_bias) * w_out + b_out;
  }
};

Decoder::Decoder(const ModelParams& base, const AdapterParams* adapters) : w_(std::make_unique<Weights>()) {
  const ModelParams dense = adapters ? merge_adapters(base, *adapters) : base;
  Weights& w = *w_;
  w.config = dense.config;
  w.token_embedding = to_matrix(dense.token_embedding);
  w.position_embedding = to_matrix(dense.position_embedding);
  w.w_out = to_matrix(dense.w_out);
  w.final_gain = to_vector(dense.final_gain);
  w.final_bias = to_vector(dense.final_bias);
  w.b_out = to_vector(dense.b_out);
  for (const LayerParams& L : dense.layers) {
    w.layers.push_back(LayerWeights{to_vector(L.ln1_gain), to_vector(L.ln1_bias), to_vector(L.bq),
                                    to_vector(L.bk),       to_vector(L.bv),       to_vector(L.bo),
                                    to_vector(L.ln2_gain), to_vector(L.ln2_bias), to_vector(L.b1),
                                    to_vector(L.b2),       to_matrix(L.wq),       to_matrix(L.wk),
                                    to_matrix(L.wv),       to_matrix(L.wo),       to_matrix(L.w1),
                                    to_matrix(L.w2)});
  }
}

Decoder::~Decoder() = default;
Decoder::Decoder(Decoder&&) noexcept = default;
Decoder& Decoder::operator=(Decoder&&) noexcept = default;

const TransformerConfig& Decoder::config() const { return w_->config; }

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<double> Decoder::logits(std::span<const int> ids) const {
  auto cache = w_->make_cache();
  std::vector<double> out;
  out.reserve(ids.size() * w_->config.vocab_size);
  for (int id : ids) {
    const RowVec row = w_->step(id, cache);
    out.insert(out.end(), row.data(), row.data() + row.size());
  }
  return out;
}

std::vector<int> Decoder::generate(std::span<const int> prompt, const DecodeOptions& options) const {
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  const bool sampling = options.mode == DecodeMode::sample && options.temperature > 0;
  if (options.mode == DecodeMode::sample && options.temperature < 0) {
    throw std::invalid_argument("generate: negative temperature");
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto cache = w_->make_cache();
  RowVec logits;
  for (int id : prompt) logits = w_->step(id, cache);

  // Leave room for EOS so any output can be scored as a target.
  const std::size_t room = w_->config.max_seq_len > prompt.size() ? w_->config.max_seq_len - prompt.size() - 1 : 0;
  const std::size_t limit = std::min(options.max_new, room);
  std::vector<int> out;
  while (out.size() < limit) {
    int next;
    if (sampling) {
      RowVec z = logits / options.temperature;
      z = (z.array() - z.maxCoeff()).exp();
      const double total = z.sum();
      double u = unit(rng) * total;
      next = static_cast<int>(z.size() - 1);
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        u -= z[i];
        if (u < 0) {
          next = static_cast<int>(i);
          break;
        }
      }
    } else {
      next = static_cast<int>(argmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size()))));
    }
    if (next == Vocabulary::kEos) break;
    out.push_back(next);
    if (out.size() == limit) break;
    logits = w_->step(next, cache);
  }
  return out;
}

std::string translate(const Decoder& decoder, const Vocabulary& vocab, const PromptTemplate& prompt,
                      std::string_view src_lang, std::string_view tgt_lang, std::string_view source,
                      const DecodeOptions& options) {
  const TokenSequence p = prompt.render(vocab, src_lang, tgt_lang, source);
  std::vector<int> ids = decoder.generate(p.ids, options);
  // Reserved ids other than EOS carry no text.
  std::erase_if(ids, [](int id) { return id < Vocabulary::kReserved; });
  return vocab.detokenize(ids);
}

}  // namespace cpo::model
