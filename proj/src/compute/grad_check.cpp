#include "cpo/compute/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cpo::compute {

double grad_check(const ScalarFn& f, std::vector<Tensor> params, double h) {
  std::vector<bool> previous;
  for (Tensor& p : params) {
    previous.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    tape.backward(f(tape));
  }

  auto evaluate = [&f] {
    Tape tape(false);
    return f(tape).item();
  };

  double worst = 0.0;
  for (Tensor& p : params) {
    auto values = p.mutable_values();
    auto analytic = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate();
      values[i] = saved - h;
      const double down = evaluate();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].set_requires_grad(previous[i]);
  return worst;
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& point, double h) {
  Tensor leaf = point.clone();
  return grad_check([&](Tape& t) { return f(t, leaf); }, {leaf}, h);
}

}  // namespace cpo::compute
