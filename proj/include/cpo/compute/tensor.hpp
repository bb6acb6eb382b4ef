#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cpo::compute {

using Shape = std::vector<std::size_t>;

/// Number of elements described by a shape. The empty shape is a scalar.
std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dense row-major tensor of doubles with an optional gradient buffer.
///
/// Copies share storage, so a parameter tensor handed to a Tape is the same
/// object the optimizer later updates. Values of tensors produced by a Tape
/// are never modified after the op that created them returns.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const;
  /// Write access for leaf tensors (parameter updates, initialization).
  std::span<double> mutable_values();

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  /// Deep copy with no gradient and no shared storage.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  explicit Tensor(std::shared_ptr<Storage> storage) : storage_(std::move(storage)) {}
  Storage& storage() const;

  std::shared_ptr<Storage> storage_;

  friend class Tape;
};

}  // namespace cpo::compute
