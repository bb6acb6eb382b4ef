#pragma once

#include <functional>
#include <vector>

#include "cpo/compute/tape.hpp"

namespace cpo::compute {

/// A scalar-valued function of tensors already bound by the caller.
using ScalarFn = std::function<Tensor(Tape&)>;

/// Compares reverse-mode gradients of `f` with central finite differences.
///
/// Every element of every tensor in `params` is perturbed by +/-h in place
/// (and restored). Returns max |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Existing gradients on `params` are overwritten.
double grad_check(const ScalarFn& f, std::vector<Tensor> params, double h = 1e-5);

/// Single-input form: `f` receives a leaf tensor holding `point`.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& point, double h = 1e-5);

}  // namespace cpo::compute
