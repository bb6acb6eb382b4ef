#include "cpo/compute/tensor.hpp"

#include <sstream>

namespace cpo::compute {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = compute::numel(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (compute::numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " holds " +
                     std::to_string(compute::numel(shape)) + " elements but " +
                     std::to_string(values.size()) + " values were given");
  }
  auto s = std::make_shared<Storage>();
  s->shape = std::move(shape);
  s->values = std::move(values);
  s->requires_grad = requires_grad;
  return Tensor(std::move(s));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor::Storage& Tensor::storage() const {
  if (!storage_) throw std::logic_error("access to an undefined tensor");
  return *storage_;
}

const Shape& Tensor::shape() const { return storage().shape; }
std::size_t Tensor::numel() const { return storage().values.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::span<const double> Tensor::values() const { return storage().values; }
std::span<double> Tensor::mutable_values() { return storage().values; }

bool Tensor::requires_grad() const { return storage().requires_grad; }
void Tensor::set_requires_grad(bool flag) { storage().requires_grad = flag; }

bool Tensor::has_grad() const { return !storage().grad.empty(); }
std::span<const double> Tensor::grad() const { return storage().grad; }

std::span<double> Tensor::mutable_grad() {
  Storage& s = storage();
  if (s.grad.size() != s.values.size()) s.grad.assign(s.values.size(), 0.0);
  return s.grad;
}

void Tensor::zero_grad() {
  Storage& s = storage();
  s.grad.assign(s.values.size(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return values()[0];
}

Tensor Tensor::clone() const {
  const Storage& s = storage();
  return from(s.shape, s.values, false);
}

}  // namespace cpo::compute
