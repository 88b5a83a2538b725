#include "ciss/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include <fmt/format.h>

#include "ciss/error.hpp"

namespace ciss {
namespace {

double evaluate(const LossFn& f) {
  Tape tape;
  return f(tape).item();
}

}  // namespace

GradCheckReport check_gradients(const LossFn& f, std::span<Tensor> params,
                                double eps, double tol) {
  if (!(eps > 0.0) || !(tol > 0.0)) {
    throw DomainError(fmt::format(
        "check_gradients: eps and tol must be positive (eps={}, tol={})", eps,
        tol));
  }
  for (Tensor& p : params) {
    if (!p.requires_grad()) {
      throw TapeError("check_gradients: parameter does not require grad");
    }
    p.zero_grad();
  }

  const double first = evaluate(f);
  const double second = evaluate(f);
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw Error(fmt::format(
        "check_gradients: function is not deterministic ({} vs {})", first,
        second));
  }

  {
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double original = values[k];
      values[k] = original + eps;
      const double plus = evaluate(f);
      values[k] = original - eps;
      const double minus = evaluate(f);
      values[k] = original;

      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom =
          std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[k] - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_index = k;
        report.analytic_at_worst = analytic[k];
        report.numeric_at_worst = numeric;
      }
    }
  }
  report.passed = std::isfinite(report.max_rel_error) &&
                  report.max_rel_error <= tol;
  return report;
}

GradCheckReport check_gradients(
    const std::function<Tensor(Tape&, const Tensor&)>& f, Tensor at,
    double eps, double tol) {
  if (!at.requires_grad()) at.set_requires_grad(true);
  Tensor params[] = {at};
  return check_gradients([&](Tape& tape) { return f(tape, at); }, params, eps,
                         tol);
}

}  // namespace ciss
