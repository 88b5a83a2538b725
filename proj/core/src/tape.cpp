#include "ciss/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "ciss/error.hpp"

namespace ciss {
namespace {

void require_same_shape(std::string_view op, const Tensor& a,
                        const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op,
                                 shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank,
                  std::string_view role) {
  if (t.rank() != rank) {
    throw ShapeError(fmt::format("{}: {} must have rank {}, got {}", op, role,
                                 rank, shape_string(t.shape())));
  }
}

bool selected(double product, Sign sign) {
  return sign == Sign::kPositive ? product > 0.0 : product < 0.0;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

bool Tape::any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::check_open(std::string_view op) const {
  if (consumed_) {
    throw TapeError(fmt::format(
        "{}: tape already differentiated; reset() before recording", op));
  }
}

void Tape::record(std::string_view op, Tensor& output,
                  std::function<void()> backward) {
  check_open(op);
  output.set_requires_grad(true);
  entries_.push_back(Entry{op, output, std::move(backward)});
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (recording_ && any_requires_grad({&a, &b})) {
    record("add", out, [a = Tensor(a), b = Tensor(b), out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (recording_ && any_requires_grad({&a, &b})) {
    record("sub", out, [a = Tensor(a), b = Tensor(b), out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (recording_ && any_requires_grad({&a, &b})) {
    record("mul", out, [a = Tensor(a), b = Tensor(b), out]() mutable {
      auto g = out.grad();
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2, "lhs");
  require_rank("matmul", b, 2, "rhs");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError(fmt::format("matmul: inner dimensions differ {} vs {}",
                                 shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out = Tensor::zeros({n, m});
  {
    auto o = out.mutable_data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double xv = x[i * k + p];
        for (std::size_t j = 0; j < m; ++j) o[i * m + j] += xv * y[p * m + j];
      }
    }
  }
  if (recording_ && any_requires_grad({&a, &b})) {
    record("matmul", out, [a = Tensor(a), b = Tensor(b), out, n, k, m]() mutable {
      auto g = out.grad();
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * y[p * m + j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double xv = x[i * k + p];
            for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += xv * g[i * m + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor Tape::signed_matmul(const Tensor& a, const Tensor& b, Sign sign) {
  require_rank("signed_matmul", a, 2, "lhs");
  require_rank("signed_matmul", b, 2, "rhs");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError(fmt::format(
        "signed_matmul: inner dimensions differ {} vs {}",
        shape_string(a.shape()), shape_string(b.shape())));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  Tensor out = Tensor::zeros({n, m});
  {
    auto o = out.mutable_data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double xv = x[i * k + p];
        for (std::size_t j = 0; j < m; ++j) {
          const double prod = xv * y[p * m + j];
          if (selected(prod, sign)) o[i * m + j] += prod;
        }
      }
    }
  }
  if (recording_ && any_requires_grad({&a, &b})) {
    record("signed_matmul", out, [a = Tensor(a), b = Tensor(b), out, n, k, m, sign]() mutable {
      auto g = out.grad();
      auto x = a.data();
      auto y = b.data();
      const bool want_a = a.requires_grad();
      const bool want_b = b.requires_grad();
      std::span<double> ga = want_a ? a.mutable_grad() : std::span<double>{};
      std::span<double> gb = want_b ? b.mutable_grad() : std::span<double>{};
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x[i * k + p];
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            const double yv = y[p * m + j];
            if (!selected(xv * yv, sign)) continue;
            const double gv = g[i * m + j];
            acc += gv * yv;
            if (want_b) gb[p * m + j] += gv * xv;
          }
          if (want_a) ga[i * k + p] += acc;
        }
      }
    });
  }
  return out;
}

Tensor Tape::conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_rank("conv2d", x, 3, "input");
  require_rank("conv2d", kernel, 4, "kernel");
  require_rank("conv2d", bias, 1, "bias");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(1),
                    kw = kernel.dim(2);
  if (kernel.dim(3) != cin || bias.dim(0) != cout || kh % 2 == 0 ||
      kw % 2 == 0) {
    throw ShapeError(fmt::format(
        "conv2d: incompatible input {} kernel {} bias {}",
        shape_string(x.shape()), shape_string(kernel.shape()),
        shape_string(bias.shape())));
  }
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);
  const std::ptrdiff_t sh = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t sw = static_cast<std::ptrdiff_t>(w);
  const std::size_t ksize = kh * kw * cin;

  // Visits every (output pixel, kernel tap) pair with in-bounds input.
  // fn(out_offset, in_offset, tap_offset) where offsets index the first
  // channel of the respective row.
  auto for_each_tap = [=](auto&& fn) {
    for (std::ptrdiff_t yy = 0; yy < sh; ++yy) {
      for (std::ptrdiff_t xx = 0; xx < sw; ++xx) {
        const std::size_t out_off =
            (static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)) *
            cout;
        for (std::size_t dy = 0; dy < kh; ++dy) {
          const std::ptrdiff_t iy = yy + static_cast<std::ptrdiff_t>(dy) - ph;
          if (iy < 0 || iy >= sh) continue;
          for (std::size_t dx = 0; dx < kw; ++dx) {
            const std::ptrdiff_t ix = xx + static_cast<std::ptrdiff_t>(dx) - pw;
            if (ix < 0 || ix >= sw) continue;
            const std::size_t in_off = (static_cast<std::size_t>(iy) * w +
                                        static_cast<std::size_t>(ix)) *
                                       cin;
            fn(out_off, in_off, (dy * kw + dx) * cin);
          }
        }
      }
    }
  };

  Tensor out = Tensor::zeros({h, w, cout});
  {
    auto o = out.mutable_data();
    auto in = x.data();
    auto k = kernel.data();
    auto b = bias.data();
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t c = 0; c < cout; ++c) o[p * cout + c] = b[c];
    }
    for_each_tap([&](std::size_t out_off, std::size_t in_off,
                     std::size_t tap_off) {
      const double* src = in.data() + in_off;
      for (std::size_t c = 0; c < cout; ++c) {
        const double* kr = k.data() + c * ksize + tap_off;
        double acc = 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci) acc += src[ci] * kr[ci];
        o[out_off + c] += acc;
      }
    });
  }
  if (recording_ && any_requires_grad({&x, &kernel, &bias})) {
    record("conv2d", out, [x = Tensor(x), kernel = Tensor(kernel), bias = Tensor(bias), out, for_each_tap, h, w, cin, cout, ksize]() mutable {
             auto g = out.grad();
             if (bias.requires_grad()) {
               auto gb = bias.mutable_grad();
               for (std::size_t p = 0; p < h * w; ++p) {
                 for (std::size_t c = 0; c < cout; ++c) gb[c] += g[p * cout + c];
               }
             }
             const bool want_x = x.requires_grad();
             const bool want_k = kernel.requires_grad();
             if (!want_x && !want_k) return;
             auto in = x.data();
             auto k = kernel.data();
             double* gx = want_x ? x.mutable_grad().data() : nullptr;
             double* gk = want_k ? kernel.mutable_grad().data() : nullptr;
             for_each_tap([&](std::size_t out_off, std::size_t in_off,
                              std::size_t tap_off) {
               const double* src = in.data() + in_off;
               for (std::size_t c = 0; c < cout; ++c) {
                 const double gv = g[out_off + c];
                 if (gv == 0.0) continue;
                 if (want_k) {
                   double* gkr = gk + c * ksize + tap_off;
                   for (std::size_t ci = 0; ci < cin; ++ci) gkr[ci] += gv * src[ci];
                 }
                 if (want_x) {
                   const double* kr = k.data() + c * ksize + tap_off;
                   double* gxr = gx + in_off;
                   for (std::size_t ci = 0; ci < cin; ++ci) gxr[ci] += gv * kr[ci];
                 }
               }
             });
           });
  }
  return out;
}

Tensor Tape::add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_row_bias", x, 2, "input");
  require_rank("add_row_bias", bias, 1, "bias");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (bias.dim(0) != c) {
    throw ShapeError(fmt::format("add_row_bias: shape mismatch {} vs {}",
                                 shape_string(x.shape()),
                                 shape_string(bias.shape())));
  }
  Tensor out = Tensor::zeros({n, c});
  {
    auto o = out.mutable_data();
    auto in = x.data();
    auto b = bias.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) o[i * c + j] = in[i * c + j] + b[j];
    }
  }
  if (recording_ && any_requires_grad({&x, &bias})) {
    record("add_row_bias", out, [x = Tensor(x), bias = Tensor(bias), out, n, c]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
      }
    });
  }
  return out;
}

Tensor Tape::relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  if (recording_ && x.requires_grad()) {
    record("relu", out, [x = Tensor(x), out]() mutable {
      auto g = out.grad();
      auto in = x.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > 0.0) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor Tape::sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_sigmoid(in[i]);
  if (recording_ && x.requires_grad()) {
    record("sigmoid", out, [x = Tensor(x), out]() mutable {
      auto g = out.grad();
      auto s = out.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * s[i] * (1.0 - s[i]);
      }
    });
  }
  return out;
}

Tensor Tape::log(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (in[i] <= 0.0) {
      throw DomainError(fmt::format(
          "log: non-positive input {} at index {}", in[i], i));
    }
    o[i] = std::log(in[i]);
  }
  if (recording_ && x.requires_grad()) {
    record("log", out, [x = Tensor(x), out]() mutable {
      auto g = out.grad();
      auto in = x.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / in[i];
    });
  }
  return out;
}

Tensor Tape::clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) {
    throw DomainError(fmt::format("clamp: empty range [{}, {}]", lo, hi));
  }
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(in[i], lo, hi);
  if (recording_ && x.requires_grad()) {
    record("clamp", out, [x = Tensor(x), out, lo, hi]() mutable {
      auto g = out.grad();
      auto in = x.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] >= lo && in[i] <= hi) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor Tape::select_by_sign(const Tensor& x, Sign sign) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = selected(in[i], sign) ? in[i] : 0.0;
  }
  if (recording_ && x.requires_grad()) {
    record("select_by_sign", out, [x = Tensor(x), out, sign]() mutable {
      auto g = out.grad();
      auto in = x.data();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (selected(in[i], sign)) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor Tape::scale(const Tensor& x, double factor) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * factor;
  if (recording_ && x.requires_grad()) {
    record("scale", out, [x = Tensor(x), out, factor]() mutable {
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor Tape::add_scalar(const Tensor& x, double offset) {
  Tensor out = Tensor::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] + offset;
  if (recording_ && x.requires_grad()) {
    record("add_scalar", out, [x = Tensor(x), out]() mutable {
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor Tape::sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (recording_ && x.requires_grad()) {
    record("sum", out, [x = Tensor(x), out]() mutable {
      const double g = out.grad()[0];
      for (double& gx : x.mutable_grad()) gx += g;
    });
  }
  return out;
}

Tensor Tape::mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc / n);
  if (recording_ && x.requires_grad()) {
    record("mean", out, [x = Tensor(x), out, n]() mutable {
      const double g = out.grad()[0] / n;
      for (double& gx : x.mutable_grad()) gx += g;
    });
  }
  return out;
}

Tensor Tape::reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError(fmt::format("reshape: cannot view {} as {}",
                                 shape_string(x.shape()),
                                 shape_string(shape)));
  }
  Tensor out = Tensor::from(std::move(shape),
                            std::vector<double>(x.data().begin(),
                                                x.data().end()));
  if (recording_ && x.requires_grad()) {
    record("reshape", out, [x = Tensor(x), out]() mutable {
      auto g = out.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor Tape::stack_columns(std::span<const Tensor> columns) {
  if (columns.empty()) throw ShapeError("stack_columns: no columns");
  const std::size_t d = columns.front().size();
  for (const Tensor& c : columns) {
    if (c.rank() != 1 || c.dim(0) != d) {
      throw ShapeError(fmt::format("stack_columns: column shape {} vs [{}]",
                                   shape_string(c.shape()), d));
    }
  }
  const std::size_t m = columns.size();
  Tensor out = Tensor::zeros({d, m});
  auto o = out.mutable_data();
  for (std::size_t j = 0; j < m; ++j) {
    auto col = columns[j].data();
    for (std::size_t r = 0; r < d; ++r) o[r * m + j] = col[r];
  }
  bool any = false;
  for (const Tensor& c : columns) any = any || c.requires_grad();
  if (recording_ && any) {
    std::vector<Tensor> inputs(columns.begin(), columns.end());
    record("stack_columns", out, [inputs, out, d, m]() mutable {
      auto g = out.grad();
      for (std::size_t j = 0; j < m; ++j) {
        if (!inputs[j].requires_grad()) continue;
        auto gc = inputs[j].mutable_grad();
        for (std::size_t r = 0; r < d; ++r) gc[r] += g[r * m + j];
      }
    });
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw TapeError("backward: tape already differentiated; re-run forward");
  }
  if (loss.size() != 1) {
    throw TapeError(fmt::format("backward: loss must be a scalar, got {}",
                                shape_string(loss.shape())));
  }
  if (!loss.requires_grad()) {
    throw TapeError("backward: loss does not depend on any tensor requiring grad");
  }
  consumed_ = true;
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward();
  }
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

}  // namespace ciss
