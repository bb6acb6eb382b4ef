#pragma once

#include <cstdint>

#include "cpo/objectives/losses.hpp"

namespace cpo::objectives {

struct GradcheckReport {
  std::size_t points = 0;
  double max_relative_error = 0;
};

/// Finite-difference check of a loss variant with respect to adapter weights
/// on a small random model. Each point draws fresh base weights, adapters
/// and a three-item batch; the reference of dpo and dpo_bc is the base model.
GradcheckReport gradcheck_variant(Variant variant, std::size_t points, std::uint64_t seed, double beta = 0.5,
                                  double lambda = 1.0);

}  // namespace cpo::objectives
