#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cpo/compute/tensor.hpp"

namespace cpo::compute {

/// Records executed operations so their adjoints can be replayed in reverse.
///
/// Every op validates shapes and rejects non-finite inputs. Ops executed on a
/// tape constructed with `record == false` compute values only. A recording
/// tape accepts exactly one backward pass; call clear() before reusing it.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Linear algebra.
  Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]
  Tensor transpose(const Tensor& a);                // [m,n] -> [n,m]

  // Elementwise.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  Tensor add_row(const Tensor& x, const Tensor& row);  // [m,n] + [n] broadcast over rows
  Tensor gelu(const Tensor& x);
  Tensor relu(const Tensor& x);
  Tensor exp(const Tensor& x);
  Tensor log(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor log_sigmoid(const Tensor& x);

  // Indexing and layout.
  Tensor embedding(const Tensor& table, std::span<const int> ids);  // [V,d] -> [T,d]
  Tensor gather_rows(const Tensor& x, std::span<const int> cols);   // [T,V] -> [T], x[t, cols[t]]
  Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
  Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor stack(std::span<const Tensor> scalars);  // n scalars -> [n]
  Tensor element(const Tensor& x, std::size_t index);  // -> scalar

  // Normalization and probability.
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
  Tensor log_softmax(const Tensor& x);  // over last axis
  Tensor softmax(const Tensor& x);      // over last axis
  Tensor causal_softmax(const Tensor& scores);  // [T,T]; row t normalizes over columns 0..t

  // Reductions.
  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);

  /// Multi-head causal scaled dot-product attention built from the ops above.
  Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every tensor
  /// that requires them, visiting recorded ops in exact reverse order.
  void backward(const Tensor& loss);

  /// Node indices in the order the last backward pass visited them.
  const std::vector<std::size_t>& last_backward_order() const { return visit_order_; }

 private:
  struct Node {
    std::string op;
    Tensor output;
    std::function<void()> adjoint;
  };

  Tensor make_output(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs);
  Tensor make_output(Shape shape, std::vector<double> values, std::span<const Tensor> inputs);
  void record(std::string op, const Tensor& out, std::function<void()> adjoint);
  void check_open() const;

  static std::vector<double>& grad_of(const Tensor& t);

  bool record_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

}  // namespace cpo::compute
