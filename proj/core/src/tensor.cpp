#include "ciss/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "ciss/error.hpp"

namespace ciss {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, ","));
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor: shape must have rank >= 1");
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw ShapeError(
          fmt::format("tensor: zero extent in shape {}", shape_string(shape)));
    }
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  auto impl = std::make_shared<Impl>();
  impl->data.assign(shape_size(shape), value);
  impl->shape = std::move(shape);
  Tensor t(std::move(impl));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape);
  if (data.size() != shape_size(shape)) {
    throw ShapeError(fmt::format("tensor: {} values do not fill shape {}",
                                 data.size(), shape_string(shape)));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  Tensor t(std::move(impl));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

const Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw ShapeError("tensor: use of an undefined tensor");
  return *impl_;
}

Tensor::Impl& Tensor::impl() {
  if (!impl_) throw ShapeError("tensor: use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw ShapeError(fmt::format("tensor: axis {} out of range for shape {}",
                                 axis, shape_string(s)));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return impl().data.size(); }

std::span<const double> Tensor::data() const { return impl().data; }

std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError(
        fmt::format("item: tensor of shape {} is not a scalar",
                    shape_string(shape())));
  }
  return impl().data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  const Impl& m = impl();
  if (m.shape.size() != 2 || row >= m.shape[0] || col >= m.shape[1]) {
    throw ShapeError(fmt::format("at({}, {}): invalid for shape {}", row, col,
                                 shape_string(m.shape)));
  }
  return m.data[row * m.shape[1] + col];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool on) {
  Impl& m = impl();
  m.requires_grad = on;
  if (on) {
    m.grad.assign(m.data.size(), 0.0);
  } else {
    m.grad.clear();
    m.grad.shrink_to_fit();
  }
}

std::span<const double> Tensor::grad() const {
  const Impl& m = impl();
  if (!m.requires_grad) throw TapeError("grad: tensor does not require grad");
  return m.grad;
}

std::span<double> Tensor::mutable_grad() {
  Impl& m = impl();
  if (!m.requires_grad) throw TapeError("grad: tensor does not require grad");
  return m.grad;
}

void Tensor::zero_grad() {
  Impl& m = impl();
  std::fill(m.grad.begin(), m.grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor::from(shape(), impl().data, false);
}

Tensor Tensor::clone() const {
  return Tensor::from(shape(), impl().data, requires_grad());
}

bool Tensor::all_finite() const {
  const Impl& m = impl();
  auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(m.data.begin(), m.data.end(), finite) &&
         std::all_of(m.grad.begin(), m.grad.end(), finite);
}

}  // namespace ciss
