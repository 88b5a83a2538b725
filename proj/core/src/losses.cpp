#include "ciss/losses.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "ciss/error.hpp"

namespace ciss {
namespace {

void require_previous_step(std::string_view op, int step) {
  if (step < 2) {
    throw DomainError(fmt::format(
        "{}: no previous model at step {} (distillation needs t >= 2)", op,
        step));
  }
}

Tensor sigmoid_const(const Tensor& z) {
  Tape scratch(false);
  return scratch.sigmoid(z);
}

}  // namespace

void LossWeights::validate() const {
  const bool ok = std::isfinite(alpha) && std::isfinite(beta) &&
                  std::isfinite(gamma) && alpha >= 0.0 && beta >= 0.0 &&
                  gamma > 0.0;
  if (!ok) {
    throw ConfigError(fmt::format(
        "loss weights need alpha, beta >= 0 and gamma > 0 (got {}, {}, {})",
        alpha, beta, gamma));
  }
}

DistillTargets distill_targets(const ModelState& previous, const Tensor& image,
                               std::span<const int> old_classes, int step) {
  require_previous_step("distill_targets", step);
  Tape tape(false);
  const Tensor f = forward_features(tape, previous.backbone, image.detach());
  const DecomposedLogits prev =
      decompose(tape, f, previous.bank, old_classes);
  DistillTargets t;
  t.step = step;
  t.p = sigmoid_const(logits(tape, f, previous.bank, old_classes));
  t.p_plus = sigmoid_const(prev.z_plus);
  t.p_minus = sigmoid_const(prev.z_minus);
  return t;
}

Tensor weighted_bce(Tape& tape, const Tensor& z, const Tensor& targets,
                    double pos_weight) {
  if (z.rank() != 2 || z.shape() != targets.shape()) {
    throw ShapeError(fmt::format("weighted_bce: logits {} vs targets {}",
                                 shape_string(z.shape()),
                                 shape_string(targets.shape())));
  }
  Tensor pos = Tensor::zeros(z.shape());
  Tensor neg = Tensor::zeros(z.shape());
  {
    auto t = targets.data();
    auto p = pos.mutable_data();
    auto n = neg.mutable_data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!(t[i] >= 0.0 && t[i] <= 1.0)) {
        throw DomainError(
            fmt::format("weighted_bce: target {} outside [0, 1]", t[i]));
      }
      p[i] = pos_weight * t[i];
      n[i] = 1.0 - t[i];
    }
  }
  // log(1 - sigmoid(z)) is evaluated as log(sigmoid(-z)) for accuracy.
  const Tensor log_p =
      tape.log(tape.clamp(tape.sigmoid(z), kProbClamp, 1.0 - kProbClamp));
  const Tensor log_q = tape.log(tape.clamp(tape.sigmoid(tape.scale(z, -1.0)),
                                           kProbClamp, 1.0 - kProbClamp));
  const Tensor terms = tape.add(tape.mul(pos, log_p), tape.mul(neg, log_q));
  return tape.scale(tape.sum(terms), -1.0 / static_cast<double>(z.dim(0)));
}

Tensor mbce(Tape& tape, const Tensor& z_novel,
            std::span<const int> novel_classes,
            std::span<const std::uint8_t> labels, double gamma) {
  if (z_novel.rank() != 2 || z_novel.dim(0) != labels.size() ||
      z_novel.dim(1) != novel_classes.size()) {
    throw ShapeError(fmt::format(
        "mbce: logits {} vs {} labels and {} classes",
        shape_string(z_novel.shape()), labels.size(), novel_classes.size()));
  }
  const std::size_t m = novel_classes.size();
  Tensor onehot = Tensor::zeros(z_novel.shape());
  auto t = onehot.mutable_data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y == kUnknown) continue;
    auto it = std::find(novel_classes.begin(), novel_classes.end(), y);
    if (it == novel_classes.end()) {
      throw DomainError(fmt::format(
          "mbce: label {} at pixel {} is neither a current class nor unknown",
          y, i));
    }
    t[i * m + static_cast<std::size_t>(it - novel_classes.begin())] = 1.0;
  }
  return weighted_bce(tape, z_novel, onehot, gamma);
}

Tensor kd(Tape& tape, const Tensor& z_old, const DistillTargets& targets) {
  require_previous_step("kd", targets.step);
  return weighted_bce(tape, z_old, targets.p, 1.0);
}

DkdLoss dkd(Tape& tape, const Tensor& z_plus, const Tensor& z_minus,
            const DistillTargets& targets) {
  require_previous_step("dkd", targets.step);
  DkdLoss out;
  out.plus = weighted_bce(tape, z_plus, targets.p_plus, 1.0);
  out.minus = weighted_bce(tape, z_minus, targets.p_minus, 1.0);
  out.total = tape.add(out.plus, out.minus);
  return out;
}

Tensor ac(Tape& tape, const Tensor& z_prime) {
  if (z_prime.rank() != 2 || z_prime.dim(1) != 1) {
    throw ShapeError(fmt::format("ac: expected {{HW, 1}} logits, got {}",
                                 shape_string(z_prime.shape())));
  }
  return weighted_bce(tape, z_prime, Tensor::zeros(z_prime.shape()), 1.0);
}

ObjectiveTerms objective(Tape& tape, const ModelState& model,
                         std::span<const SegSample> batch,
                         std::span<const DistillTargets> targets,
                         const StepClasses& classes,
                         const ObjectiveOptions& options) {
  options.weights.validate();
  if (batch.empty()) throw ShapeError("objective: empty batch");
  const bool distill = classes.step >= 2;
  const bool use_kd = distill && options.kd_on && options.weights.alpha > 0.0;
  const bool use_dkd =
      distill && options.dkd_on && options.weights.beta > 0.0;
  if ((use_kd || use_dkd) && targets.size() != batch.size()) {
    throw ShapeError(fmt::format(
        "objective: {} distillation targets for a batch of {}", targets.size(),
        batch.size()));
  }

  auto accumulate = [&](Tensor& acc, const Tensor& term) {
    acc = acc.defined() ? tape.add(acc, term) : term;
  };
  Tensor sum_mbce, sum_kd, sum_dkd_plus, sum_dkd_minus, sum_ac;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const SegSample& sample = batch[b];
    const Tensor f =
        forward_features(tape, model.backbone, sample.image_tensor());
    accumulate(sum_mbce,
               mbce(tape, logits(tape, f, model.bank, classes.novel),
                    classes.novel, sample.labels, options.weights.gamma));
    if (use_kd) {
      accumulate(sum_kd,
                 kd(tape, logits(tape, f, model.bank, classes.old), targets[b]));
    }
    if (use_dkd) {
      const DecomposedLogits dec = decompose(tape, f, model.bank, classes.old);
      const DkdLoss d = dkd(tape, dec.z_plus, dec.z_minus, targets[b]);
      accumulate(sum_dkd_plus, d.plus);
      accumulate(sum_dkd_minus, d.minus);
    }
    accumulate(sum_ac, ac(tape, aux_logit(tape, f, model.aux)));
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  auto batch_mean = [&](const Tensor& s) {
    return s.defined() ? tape.scale(s, inv) : Tensor::scalar(0.0);
  };
  ObjectiveTerms out;
  out.mbce = batch_mean(sum_mbce);
  out.kd = batch_mean(sum_kd);
  out.dkd_plus = batch_mean(sum_dkd_plus);
  out.dkd_minus = batch_mean(sum_dkd_minus);
  out.dkd = use_dkd ? tape.add(out.dkd_plus, out.dkd_minus) : Tensor::scalar(0.0);
  out.ac = batch_mean(sum_ac);

  Tensor total = tape.add(out.mbce, out.ac);
  if (use_kd) total = tape.add(total, tape.scale(out.kd, options.weights.alpha));
  if (use_dkd) {
    total = tape.add(total, tape.scale(out.dkd, options.weights.beta));
  }
  out.total = total;
  return out;
}

}  // namespace ciss
