#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ciss/tensor.hpp"

namespace ciss {

enum class Sign { kPositive, kNegative };

// Records primitive operations for reverse-mode differentiation.
//
// Every primitive computes its forward value in 64-bit regardless of whether
// it is recorded; an entry (with its backward rule) is appended only when at
// least one input requires grad. Entries are appended in evaluation order,
// which is a topological order of the graph.
//
// A tape supports a single backward() traversal. Record a fresh forward pass
// (new tape, or reset()) before differentiating again.
class Tape {
 public:
  // A non-recording tape evaluates the same forward values but keeps no
  // entries; use it for inference and frozen models.
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Elementwise; operands must have identical shapes.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);

  // a: {N, K}, b: {K, M} -> {N, M}.
  Tensor matmul(const Tensor& a, const Tensor& b);

  // Sum over k of a(i,k) * b(k,j), keeping only the products whose sign
  // matches `sign`. Products equal to zero are dropped and pass no gradient.
  Tensor signed_matmul(const Tensor& a, const Tensor& b, Sign sign);

  // x: {H, W, Cin}, kernel: {Cout, KH, KW, Cin} with odd KH, KW,
  // bias: {Cout}. Stride 1, zero padding that preserves H x W.
  Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

  // x: {N, C}, bias: {C}; adds bias to every row. The only broadcast.
  Tensor add_row_bias(const Tensor& x, const Tensor& bias);

  Tensor relu(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  // Throws DomainError on any non-positive input; NaN propagates.
  Tensor log(const Tensor& x);
  // Gradient passes where lo <= x <= hi.
  Tensor clamp(const Tensor& x, double lo, double hi);
  // x * [sign(x) matches], subgradient 0 at x == 0.
  Tensor select_by_sign(const Tensor& x, Sign sign);

  Tensor scale(const Tensor& x, double factor);
  Tensor add_scalar(const Tensor& x, double offset);
  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);

  // Same data in a new shape with equal element count.
  Tensor reshape(const Tensor& x, Shape shape);
  // Columns of length d -> {d, columns.size()}.
  Tensor stack_columns(std::span<const Tensor> columns);

  // Populates grad of every requires_grad tensor reachable from `loss`.
  // Gradients accumulate into existing buffers, so parameters shared across
  // several tapes sum their contributions.
  void backward(const Tensor& loss);

  // Discards all entries so the tape can record a new forward pass.
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  bool recording() const { return recording_; }

 private:
  struct Entry {
    std::string_view op;
    Tensor output;
    std::function<void()> backward;
  };

  static bool any_requires_grad(std::initializer_list<const Tensor*> inputs);
  void record(std::string_view op, Tensor& output,
              std::function<void()> backward);
  void check_open(std::string_view op) const;

  std::vector<Entry> entries_;
  bool recording_ = true;
  bool consumed_ = false;
};

}  // namespace ciss
