#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpo/compute/tape.hpp"
#include "cpo/experiments/config.hpp"

namespace cpo::experiments {

using compute::Tape;
using compute::Tensor;

class Adam {
 public:
  Adam(std::vector<Tensor> params, const OptimizerConfig& config);

  /// Clips the accumulated gradients to grad_clip global norm, applies one
  /// update at learning rate `lr` and zeroes the gradients. Returns the norm
  /// before clipping.
  double step(double lr);
  void zero_grad();
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  OptimizerConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Learning rate at 0-based `step` of `total`: linear warmup over
/// ceil(warmup_ratio * total) steps, then linear decay to zero.
double scheduled_lr(const OptimizerConfig& config, std::uint64_t step, std::uint64_t total);

/// Steps an epoch of `items` entries takes.
std::uint64_t steps_per_epoch(std::size_t items, std::size_t batch_size);

struct StepRecord {
  std::uint64_t step = 0;
  double lr = 0;
  double loss = 0;
  double prefer_term = 0;
  double nll_term = 0;
  double grad_norm = 0;
};

nlohmann::json to_json(const StepRecord& r);

/// What the loop needs from one batch: the loss tensor on the tape and the
/// parts to log. Counters are summed across the run.
struct BatchLoss {
  Tensor total;
  double prefer_term = 0;
  double nll_term = 0;
};

using BatchFn = std::function<BatchLoss(Tape& tape, std::span<const std::size_t> indices)>;

struct TrainResult {
  std::vector<StepRecord> trajectory;
  std::uint64_t steps = 0;
};

/// Shuffles item indices each epoch with a generator seeded by seed + epoch,
/// walks them in batches (the last batch may be short) and updates `params`.
/// A non-finite loss or gradient aborts with Error("diverged", "step N ...").
/// `max_steps` stops the run early without changing the schedule.
TrainResult train(std::vector<Tensor> params, std::size_t items, const OptimizerConfig& config, std::uint64_t seed,
                  const BatchFn& batch_loss, std::optional<std::uint64_t> max_steps = std::nullopt);

}  // namespace cpo::experiments
