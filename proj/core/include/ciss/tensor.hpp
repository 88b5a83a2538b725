#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ciss {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of 64-bit reals.
//
// Tensor is a handle: copies share the same storage, which is what lets the
// gradient tape accumulate into parameters held elsewhere. Use clone() for
// an independent deep copy. A scalar is a tensor of shape {1}.
class Tensor {
 public:
  // Empty handle; most operations reject it.
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();

  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  // Enabling allocates a zeroed gradient buffer; disabling frees it.
  void set_requires_grad(bool on);
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no gradient participation, independent storage.
  Tensor detach() const;
  // Deep copy including requires_grad (gradient buffer starts at zero).
  Tensor clone() const;
  bool shares_storage_with(const Tensor& other) const {
    return impl_ == other.impl_;
  }

  // All stored values (and gradients, when present) are finite.
  bool all_finite() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  const Impl& impl() const;
  Impl& impl();

  std::shared_ptr<Impl> impl_;
};

}  // namespace ciss
