#include "cpo/experiments/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cpo/common/error.hpp"

namespace cpo::experiments {

Adam::Adam(std::vector<Tensor> params, const OptimizerConfig& config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double Adam::step(double lr) {
  double sq = 0;
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw compute::NumericError("non-finite gradient norm");
  const double clip = config_.grad_clip > 0 && norm > config_.grad_clip ? config_.grad_clip / norm : 1.0;

  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * clip;
      m[k] = config_.beta1 * m[k] + (1 - config_.beta1) * gk;
      v[k] = config_.beta2 * v[k] + (1 - config_.beta2) * gk * gk;
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
    }
  }
  zero_grad();
  return norm;
}

double scheduled_lr(const OptimizerConfig& config, std::uint64_t step, std::uint64_t total) {
  if (total == 0) return 0;
  const auto warmup = static_cast<std::uint64_t>(std::ceil(config.warmup_ratio * static_cast<double>(total)));
  if (step < warmup) return config.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (warmup >= total) return config.lr;
  const double remaining = static_cast<double>(total - step) / static_cast<double>(total - warmup);
  return config.lr * remaining;
}

std::uint64_t steps_per_epoch(std::size_t items, std::size_t batch_size) {
  return (items + batch_size - 1) / batch_size;
}

nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step},           {"lr", r.lr},         {"loss", r.loss}, {"prefer_term", r.prefer_term},
          {"nll_term", r.nll_term}, {"grad_norm", r.grad_norm}};
}

TrainResult train(std::vector<Tensor> params, std::size_t items, const OptimizerConfig& config, std::uint64_t seed,
                  const BatchFn& batch_loss, std::optional<std::uint64_t> max_steps) {
  config.validate("optimizer");
  TrainResult result;
  if (items == 0) return result;
  Adam adam(params, config);
  adam.zero_grad();
  const std::uint64_t per_epoch = steps_per_epoch(items, config.batch_size);
  const std::uint64_t total = per_epoch * config.epochs;

  std::vector<std::size_t> order(items);
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed + epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < items; begin += config.batch_size, ++step) {
      if (max_steps && step >= *max_steps) break;
      const std::size_t count = std::min(config.batch_size, items - begin);
      StepRecord rec;
      rec.step = step;
      rec.lr = scheduled_lr(config, step, total);
      try {
        Tape tape;
        const BatchLoss loss = batch_loss(tape, std::span<const std::size_t>(order).subspan(begin, count));
        rec.loss = loss.total.item();
        rec.prefer_term = loss.prefer_term;
        rec.nll_term = loss.nll_term;
        if (!std::isfinite(rec.loss)) throw compute::NumericError("non-finite loss");
        tape.backward(loss.total);
        rec.grad_norm = adam.step(rec.lr);
      } catch (const compute::NumericError& e) {
        throw Error("diverged", "step " + std::to_string(step) + ": " + e.what());
      }
      result.trajectory.push_back(rec);
    }
  }
  result.steps = step;
  return result;
}

}  // namespace cpo::experiments
