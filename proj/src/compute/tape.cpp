#include "cpo/compute/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace cpo::compute {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_finite(const Tensor& t, const char* op) {
  // x * 0 is NaN exactly for NaN and ±inf. Independent accumulators let the
  // compiler vectorize the scan.
  const auto v = t.values();
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= v.size(); i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += v[i + j] * 0.0;
  }
  for (; i < v.size(); ++i) acc[0] += v[i] * 0.0;
  double total = 0;
  for (double a : acc) total += a;
  if (total != 0.0) throw NumericError(std::string(op) + ": non-finite input value");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// -softplus(-x), written branch-free around |x|.
double stable_log_sigmoid(double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

std::vector<double>& Tape::grad_of(const Tensor& t) {
  auto& s = t.storage();
  if (s.grad.size() != s.values.size()) s.grad.assign(s.values.size(), 0.0);
  return s.grad;
}

void Tape::clear() {
  nodes_.clear();
  visit_order_.clear();
  consumed_ = false;
}

void Tape::check_open() const {
  if (consumed_) throw std::logic_error("tape already consumed by backward(); call clear() first");
}

Tensor Tape::make_output(Shape shape, std::vector<double> values,
                         std::initializer_list<const Tensor*> inputs) {
  check_open();
  bool needs = false;
  for (const Tensor* in : inputs) needs = needs || in->requires_grad();
  return Tensor::from(std::move(shape), std::move(values), record_ && needs);
}

Tensor Tape::make_output(Shape shape, std::vector<double> values, std::span<const Tensor> inputs) {
  check_open();
  bool needs = false;
  for (const Tensor& in : inputs) needs = needs || in.requires_grad();
  return Tensor::from(std::move(shape), std::move(values), record_ && needs);
}

void Tape::record(std::string op, const Tensor& out, std::function<void()> adjoint) {
  if (!out.requires_grad()) return;
  nodes_.push_back(Node{std::move(op), out, std::move(adjoint)});
}

void Tape::backward(const Tensor& loss) {
  if (!record_) throw std::logic_error("backward() on a non-recording tape");
  check_open();
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  consumed_ = true;
  visit_order_.clear();
  if (!loss.requires_grad()) return;
  grad_of(loss)[0] += 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    visit_order_.push_back(i);
    // An output nothing downstream consumed has a zero adjoint.
    if (nodes_[i].output.has_grad()) nodes_[i].adjoint();
  }
  // Release intermediates; leaf gradients live on in their storage.
  nodes_.clear();
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, lhs " + shape_string(a.shape()) + " rhs " +
                     shape_string(b.shape()));
  }
  require_finite(a, "matmul");
  require_finite(b, "matmul");
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.values(), m, k) * as_matrix(b.values(), k, n);
  Tensor y = make_output({m, n}, std::move(out), {&a, &b});
  record("matmul", y, [a, b, y, m, k, n] {
    auto dy = as_matrix(y.grad(), m, n);
    if (a.requires_grad()) as_matrix(grad_of(a), m, k).noalias() += dy * as_matrix(b.values(), k, n).transpose();
    if (b.requires_grad()) as_matrix(grad_of(b), k, n).noalias() += as_matrix(a.values(), m, k).transpose() * dy;
  });
  return y;
}

Tensor Tape::transpose(const Tensor& a) {
  require_rank(a, 2, "transpose", "input");
  require_finite(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  as_matrix(out, n, m) = as_matrix(a.values(), m, n).transpose();
  Tensor y = make_output({n, m}, std::move(out), {&a});
  record("transpose", y, [a, y, m, n] {
    as_matrix(grad_of(a), m, n) += as_matrix(y.grad(), n, m).transpose();
  });
  return y;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  require_finite(a, "add");
  require_finite(b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  Tensor y = make_output(a.shape(), std::move(out), {&a, &b});
  record("add", y, [a, b, y] {
    auto dy = y.grad();
    for (const Tensor* in : {&a, &b}) {
      if (!in->requires_grad()) continue;
      auto& g = grad_of(*in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
    }
  });
  return y;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  require_finite(a, "sub");
  require_finite(b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  Tensor y = make_output(a.shape(), std::move(out), {&a, &b});
  record("sub", y, [a, b, y] {
    auto dy = y.grad();
    if (a.requires_grad()) {
      auto& g = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
    }
    if (b.requires_grad()) {
      auto& g = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= dy[i];
    }
  });
  return y;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  require_finite(a, "mul");
  require_finite(b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  Tensor y = make_output(a.shape(), std::move(out), {&a, &b});
  record("mul", y, [a, b, y] {
    auto dy = y.grad();
    if (a.requires_grad()) {
      auto& g = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * b.at(i);
    }
    if (b.requires_grad()) {
      auto& g = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * a.at(i);
    }
  });
  return y;
}

Tensor Tape::scale(const Tensor& a, double factor) {
  require_finite(a, "scale");
  if (!std::isfinite(factor)) throw NumericError("scale: non-finite factor");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  Tensor y = make_output(a.shape(), std::move(out), {&a});
  record("scale", y, [a, y, factor] {
    auto dy = y.grad();
    auto& g = grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * factor;
  });
  return y;
}

Tensor Tape::add_row(const Tensor& x, const Tensor& row) {
  require_rank(x, 2, "add_row", "input");
  require_rank(row, 1, "add_row", "row");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (row.dim(0) != n) {
    throw ShapeError("add_row: row " + shape_string(row.shape()) + " does not match columns of " +
                     shape_string(x.shape()));
  }
  require_finite(x, "add_row");
  require_finite(row, "add_row");
  std::vector<double> out(x.values().begin(), x.values().end());
  auto r = row.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  Tensor y = make_output(x.shape(), std::move(out), {&x, &row});
  record("add_row", y, [x, row, y, m, n] {
    auto dy = y.grad();
    if (x.requires_grad()) {
      auto& g = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
    }
    if (row.requires_grad()) {
      auto& g = grad_of(row);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j];
    }
  });
  return y;
}

Tensor Tape::gelu(const Tensor& x) {
  require_finite(x, "gelu");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.at(i);
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  record("gelu", y, [x, y] {
    auto dy = y.grad();
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.at(i);
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      g[i] += dy[i] * (cdf + v * pdf);
    }
  });
  return y;
}

Tensor Tape::relu(const Tensor& x) {
  require_finite(x, "relu");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.at(i));
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  record("relu", y, [x, y] {
    auto dy = y.grad();
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.at(i) > 0) g[i] += dy[i];
  });
  return y;
}

Tensor Tape::exp(const Tensor& x) {
  require_finite(x, "exp");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.at(i));
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  record("exp", y, [x, y] {
    auto dy = y.grad();
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * y.at(i);
  });
  return y;
}

Tensor Tape::log(const Tensor& x) {
  require_finite(x, "log");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x.at(i) > 0)) throw NumericError("log: non-positive input " + std::to_string(x.at(i)));
    out[i] = std::log(x.at(i));
  }
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  record("log", y, [x, y] {
    auto dy = y.grad();
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] / x.at(i);
  });
  return y;
}

Tensor Tape::sigmoid(const Tensor& x) {
  require_finite(x, "sigmoid");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x.at(i));
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  record("sigmoid", y, [x, y] {
    auto dy = y.grad();
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * y.at(i) * (1.0 - y.at(i));
  });
  return y;
}

Tensor Tape::log_sigmoid(const Tensor& x) {
  require_finite(x, "log_sigmoid");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_log_sigmoid(x.at(i));
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  record("log_sigmoid", y, [x, y] {
    auto dy = y.grad();
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * stable_sigmoid(-x.at(i));
  });
  return y;
}

Tensor Tape::embedding(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding", "table");
  require_finite(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1), t = ids.size();
  std::vector<double> out(t * d);
  auto tv = table.values();
  for (std::size_t i = 0; i < t; ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  Tensor y = make_output({t, d}, std::move(out), {&table});
  std::vector<int> idx(ids.begin(), ids.end());
  record("embedding", y, [table, y, idx = std::move(idx), d] {
    auto dy = y.grad();
    auto& g = grad_of(table);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[static_cast<std::size_t>(idx[i]) * d + j] += dy[i * d + j];
  });
  return y;
}

Tensor Tape::gather_rows(const Tensor& x, std::span<const int> cols) {
  require_rank(x, 2, "gather_rows", "input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (cols.size() != m) {
    throw ShapeError("gather_rows: " + std::to_string(cols.size()) + " indices for " +
                     std::to_string(m) + " rows");
  }
  require_finite(x, "gather_rows");
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(cols[i]) + " outside " +
                       std::to_string(n) + " columns");
    }
    out[i] = x.at(i * n + static_cast<std::size_t>(cols[i]));
  }
  Tensor y = make_output({m}, std::move(out), {&x});
  std::vector<int> idx(cols.begin(), cols.end());
  record("gather_rows", y, [x, y, idx = std::move(idx), n] {
    auto dy = y.grad();
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * n + static_cast<std::size_t>(idx[i])] += dy[i];
  });
  return y;
}

Tensor Tape::slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_rows", "input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin + count > m) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") exceed " + shape_string(x.shape()));
  }
  require_finite(x, "slice_rows");
  auto v = x.values();
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          v.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  Tensor y = make_output({count, n}, std::move(out), {&x});
  record("slice_rows", y, [x, y, begin, n] {
    auto dy = y.grad();
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < dy.size(); ++i) g[begin * n + i] += dy[i];
  });
  return y;
}

Tensor Tape::slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_cols", "input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin + count > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") exceed " + shape_string(x.shape()));
  }
  require_finite(x, "slice_cols");
  std::vector<double> out(m * count);
  as_matrix(out, m, count) = as_matrix(x.values(), m, n).middleCols(static_cast<Eigen::Index>(begin),
                                                                    static_cast<Eigen::Index>(count));
  Tensor y = make_output({m, count}, std::move(out), {&x});
  record("slice_cols", y, [x, y, begin, m, n, count] {
    as_matrix(grad_of(x), m, n).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) +=
        as_matrix(y.grad(), m, count);
  });
  return y;
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols", "part");
    if (p.dim(0) != m) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    require_finite(p, "concat_cols");
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  auto om = as_matrix(out, m, total);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    om.middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(p.dim(1))) =
        as_matrix(p.values(), m, p.dim(1));
    off += p.dim(1);
  }
  Tensor y = make_output({m, total}, std::move(out), parts);
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  record("concat_cols", y, [inputs = std::move(inputs), offsets = std::move(offsets), y, m, total] {
    auto dy = as_matrix(y.grad(), m, total);
    for (std::size_t p = 0; p < inputs.size(); ++p) {
      if (!inputs[p].requires_grad()) continue;
      const std::size_t c = inputs[p].dim(1);
      as_matrix(grad_of(inputs[p]), m, c) +=
          dy.middleCols(static_cast<Eigen::Index>(offsets[p]), static_cast<Eigen::Index>(c));
    }
  });
  return y;
}

Tensor Tape::stack(std::span<const Tensor> scalars) {
  std::vector<double> out;
  out.reserve(scalars.size());
  for (const Tensor& s : scalars) {
    if (s.numel() != 1) throw ShapeError("stack: expected scalars, got " + shape_string(s.shape()));
    require_finite(s, "stack");
    out.push_back(s.item());
  }
  Tensor y = make_output({scalars.size()}, std::move(out), scalars);
  std::vector<Tensor> inputs(scalars.begin(), scalars.end());
  record("stack", y, [inputs = std::move(inputs), y] {
    auto dy = y.grad();
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (inputs[i].requires_grad()) grad_of(inputs[i])[0] += dy[i];
  });
  return y;
}

Tensor Tape::element(const Tensor& x, std::size_t index) {
  if (index >= x.numel()) {
    throw ShapeError("element: index " + std::to_string(index) + " outside " + shape_string(x.shape()));
  }
  require_finite(x, "element");
  Tensor y = make_output({}, {x.at(index)}, {&x});
  record("element", y, [x, y, index] { grad_of(x)[index] += y.grad()[0]; });
  return y;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank(x, 2, "layer_norm", "input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw ShapeError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " +
                     shape_string(bias.shape()) + " do not match width of " + shape_string(x.shape()));
  }
  require_finite(x, "layer_norm");
  require_finite(gain, "layer_norm");
  require_finite(bias, "layer_norm");
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = xv[i * n + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xv[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gv[j] + bv[j];
    }
  }
  Tensor y = make_output({m, n}, std::move(out), {&x, &gain, &bias});
  record("layer_norm", y, [x, gain, bias, y, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n] {
    auto dy = y.grad();
    auto gv = gain.values();
    if (gain.requires_grad()) {
      auto& gg = grad_of(gain);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gg[j] += dy[i * n + j] * xhat[i * n + j];
    }
    if (bias.requires_grad()) {
      auto& gb = grad_of(bias);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
    }
    if (!x.requires_grad()) return;
    auto& gx = grad_of(x);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i) {
      double sum_d = 0, sum_dx = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double d = dy[i * n + j] * gv[j];
        sum_d += d;
        sum_dx += d * xhat[i * n + j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double d = dy[i * n + j] * gv[j];
        gx[i * n + j] += inv_std[i] * (d - inv_n * sum_d - xhat[i * n + j] * inv_n * sum_dx);
      }
    }
  });
  return y;
}

Tensor Tape::log_softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("log_softmax: scalar input");
  require_finite(x, "log_softmax");
  const std::size_t n = x.shape().back(), m = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  record("log_softmax", y, [x, y, m, n] {
    auto dy = y.grad();
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += dy[i * n + j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += dy[i * n + j] - std::exp(y.at(i * n + j)) * s;
    }
  });
  return y;
}

Tensor Tape::softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax: scalar input");
  require_finite(x, "softmax");
  const std::size_t n = x.shape().back(), m = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += (out[i * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
  }
  Tensor y = make_output(x.shape(), std::move(out), {&x});
  record("softmax", y, [x, y, m, n] {
    auto dy = y.grad();
    auto& g = grad_of(x);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[i * n + j] * y.at(i * n + j);
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y.at(i * n + j) * (dy[i * n + j] - dot);
    }
  });
  return y;
}

Tensor Tape::causal_softmax(const Tensor& scores) {
  require_rank(scores, 2, "causal_softmax", "scores");
  const std::size_t t = scores.dim(0);
  if (scores.dim(1) != t) throw ShapeError("causal_softmax: scores must be square, got " + shape_string(scores.shape()));
  require_finite(scores, "causal_softmax");
  std::vector<double> out(t * t, 0.0);
  auto sv = scores.values();
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = sv.data() + i * t;
    const double mx = *std::max_element(row, row + i + 1);
    double s = 0;
    for (std::size_t j = 0; j <= i; ++j) s += (out[i * t + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j <= i; ++j) out[i * t + j] /= s;
  }
  Tensor y = make_output({t, t}, std::move(out), {&scores});
  record("causal_softmax", y, [scores, y, t] {
    auto dy = y.grad();
    auto& g = grad_of(scores);
    for (std::size_t i = 0; i < t; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j <= i; ++j) dot += dy[i * t + j] * y.at(i * t + j);
      for (std::size_t j = 0; j <= i; ++j) g[i * t + j] += y.at(i * t + j) * (dy[i * t + j] - dot);
    }
  });
  return y;
}

Tensor Tape::sum(const Tensor& x) {
  require_finite(x, "sum");
  double s = 0;
  for (double v : x.values()) s += v;
  Tensor y = make_output({}, {s}, {&x});
  record("sum", y, [x, y] {
    const double d = y.grad()[0];
    for (double& g : grad_of(x)) g += d;
  });
  return y;
}

Tensor Tape::mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  require_finite(x, "mean");
  double s = 0;
  for (double v : x.values()) s += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor y = make_output({}, {s * inv}, {&x});
  record("mean", y, [x, y, inv] {
    const double d = y.grad()[0] * inv;
    for (double& g : grad_of(x)) g += d;
  });
  return y;
}

Tensor Tape::causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require_rank(q, 2, "causal_attention", "q");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("causal_attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) +
                     ", v " + shape_string(v.shape()) + " must agree");
  }
  const std::size_t width = q.dim(1);
  if (heads == 0 || width % heads != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(width) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t head_dim = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * head_dim, head_dim);
    Tensor kh = slice_cols(k, h * head_dim, head_dim);
    Tensor vh = slice_cols(v, h * head_dim, head_dim);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    outs.push_back(matmul(causal_softmax(scores), vh));
  }
  return concat_cols(outs);
}

}  // namespace cpo::compute
