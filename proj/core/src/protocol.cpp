#include "ciss/protocol.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "ciss/error.hpp"

namespace ciss {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw ConfigError(fmt::format("train config: {}", what));
  };
  if (epochs < 1) fail(fmt::format("epochs must be >= 1, got {}", epochs));
  if (batch_size < 1) fail("batch_size must be >= 1");
  // A zero rate is accepted and leaves the model untouched.
  if (!(std::isfinite(lr_initial) && lr_initial >= 0.0) ||
      !(std::isfinite(lr_incremental) && lr_incremental >= 0.0)) {
    fail("learning rates must be finite and non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(std::isfinite(poly_power) && poly_power >= 0.0)) {
    fail("poly_power must be finite and >= 0");
  }
  if (!(tau > 0.0 && tau < 1.0)) fail("tau must lie in (0, 1)");
  if (backbone_channels.size() < 2) fail("backbone needs >= 2 widths");
  if (drift_images < 1) fail("drift_images must be >= 1");
  weights(1).validate();
  weights(2).validate();
}

LossWeights TrainConfig::weights(int step) const {
  return {alpha, beta, step == 1 ? gamma_initial : gamma_incremental};
}

double poly_lr(double base, std::size_t iter, std::size_t total, double power) {
  if (total == 0 || iter >= total) return 0.0;
  const double frac =
      1.0 - static_cast<double>(iter) / static_cast<double>(total);
  return base * std::pow(frac, power);
}

SgdMomentum::SgdMomentum(std::vector<Tensor> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
  for (const Tensor& p : params_) {
    if (!p.requires_grad()) {
      throw TapeError("SgdMomentum: parameter does not require grad");
    }
    velocity_.emplace_back(p.size(), 0.0);
  }
}

void SgdMomentum::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto theta = params_[i].mutable_data();
    auto g = params_[i].grad();
    auto& v = velocity_[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      v[k] = momentum_ * v[k] + g[k];
      theta[k] -= lr * v[k];
    }
  }
}

void SgdMomentum::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

ModelState init_step(const ModelState& previous,
                     std::span<const int> new_classes, bool aux_init_on,
                     Rng& rng) {
  for (int c : new_classes) {
    if (previous.bank.contains(c)) {
      throw ConfigError(fmt::format(
          "init_step: class {} already has a classifier", c));
    }
  }
  ModelState next = previous.clone(true);
  next.step = previous.step + 1;
  const std::size_t d = next.backbone.feature_dim();
  for (int c : new_classes) {
    ClassHead head;
    if (aux_init_on) {
      head.class_id = c;
      head.weight = previous.aux.weight.clone();
      head.bias = previous.aux.bias.clone();
    } else {
      head = random_head(c, d, rng);
    }
    head.weight.set_requires_grad(true);
    head.bias.set_requires_grad(true);
    next.bank.add(std::move(head));
  }
  return next;
}

namespace {

void require_finite(double value, std::string_view term, int step, int epoch,
                    std::size_t iter) {
  if (!std::isfinite(value)) {
    throw NumericError(fmt::format(
        "{} became non-finite ({}) at step {} epoch {} iteration {}", term,
        value, step, epoch, iter));
  }
}

std::vector<int> without(const std::vector<int>& all,
                         std::span<const int> removed) {
  std::vector<int> out;
  for (int c : all) {
    if (std::find(removed.begin(), removed.end(), c) == removed.end()) {
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace

StepTrainResult train_step(ModelState& model, const StepDataset& data,
                           const TrainConfig& config,
                           const ModelState* previous,
                           const EpochCallback& on_epoch_end) {
  config.validate();
  const int step = data.step;
  if ((step >= 2) != (previous != nullptr)) {
    throw ConfigError(fmt::format(
        "train_step: previous model must be given iff step >= 2 (step {})",
        step));
  }
  if (data.train.empty()) throw ConfigError("train_step: empty dataset");

  StepClasses classes;
  classes.step = step;
  classes.novel = data.classes;
  classes.old = without(model.bank.class_ids(), data.classes);

  ObjectiveOptions options;
  options.weights = config.weights(step);
  options.kd_on = config.kd_on;
  options.dkd_on = config.dkd_on;
  const bool need_targets =
      step >= 2 && ((config.kd_on && config.alpha > 0.0) ||
                    (config.dkd_on && config.beta > 0.0));

  // The previous model and the images are fixed for the whole step, so each
  // image's targets are computed once.
  std::vector<std::optional<DistillTargets>> target_cache(data.train.size());
  auto targets_for = [&](std::size_t i) -> const DistillTargets& {
    if (!target_cache[i]) {
      target_cache[i] = distill_targets(*previous, data.train[i].image_tensor(),
                                        classes.old, step);
    }
    return *target_cache[i];
  };

  std::vector<Tensor> params;
  for (const NamedTensor& p : model.parameters()) params.push_back(p.tensor);
  SgdMomentum sgd(params, config.momentum);

  const std::size_t n = data.train.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_iters =
      per_epoch * static_cast<std::size_t>(config.epochs);
  const double base_lr = config.base_lr(step);

  Rng order_rng = Rng(config.seed).fork(0x5EED0000ULL + static_cast<std::uint64_t>(step));
  std::vector<std::size_t> order(n);

  StepTrainResult result;
  std::size_t iter = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(std::span<std::size_t>(order));
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::vector<SegSample> batch;
      std::vector<DistillTargets> targets;
      for (std::size_t j = start; j < end; ++j) {
        batch.push_back(data.train[order[j]]);
        if (need_targets) targets.push_back(targets_for(order[j]));
      }
      const double lr = poly_lr(base_lr, iter, total_iters, config.poly_power);

      sgd.zero_grad();
      Tape tape;
      const ObjectiveTerms terms =
          objective(tape, model, batch, targets, classes, options);
      TraceRow row{step,
                   epoch,
                   iter,
                   lr,
                   terms.mbce.item(),
                   terms.kd.item(),
                   terms.dkd.item(),
                   terms.ac.item(),
                   terms.total.item()};
      require_finite(row.mbce, "L_mbce", step, epoch, iter);
      require_finite(row.kd, "L_kd", step, epoch, iter);
      require_finite(row.dkd, "L_dkd", step, epoch, iter);
      require_finite(row.ac, "L_ac", step, epoch, iter);
      require_finite(row.total, "L_total", step, epoch, iter);
      tape.backward(terms.total);
      for (const NamedTensor& p : model.parameters()) {
        if (!p.tensor.all_finite()) {
          throw NumericError(fmt::format(
              "gradient of {} became non-finite at step {} epoch {} "
              "iteration {}",
              p.name, step, epoch, iter));
        }
      }
      sgd.step(lr);
      epoch_sum += row.total;
      result.trace.push_back(row);
      ++iter;
    }
    const double epoch_mean = epoch_sum / static_cast<double>(per_epoch);
    result.epoch_mean_loss.push_back(epoch_mean);
    spdlog::debug("step {} epoch {}/{} mean loss {:.6f}", step, epoch,
                  config.epochs, epoch_mean);
    if (on_epoch_end) on_epoch_end(epoch, iter);
  }
  return result;
}

namespace {

Tensor probabilities(const ModelState& model, const Tensor& image) {
  Tape tape(false);
  const Tensor f = forward_features(tape, model.backbone, image);
  return tape.sigmoid(logits(tape, f, model.bank));
}

}  // namespace

std::vector<std::uint8_t> predict(const ModelState& model, const Tensor& image,
                                  double tau) {
  const Tensor p = probabilities(model, image);
  const std::vector<int> ids = model.bank.class_ids();
  const std::size_t n = p.dim(0), m = p.dim(1);
  auto v = p.data();
  std::vector<std::uint8_t> out(n, static_cast<std::uint8_t>(kBackground));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      // Strict comparison keeps the lowest class id on ties.
      if (v[i * m + j] > v[i * m + best]) best = j;
    }
    if (v[i * m + best] >= tau) out[i] = static_cast<std::uint8_t>(ids[best]);
  }
  return out;
}

ConfusionMatrix evaluate(const ModelState& model,
                         std::span<const SegSample> images, int num_classes,
                         double tau) {
  ConfusionMatrix cm(num_classes);
  for (const SegSample& s : images) {
    cm.add(s.labels, predict(model, s.image_tensor(), tau));
  }
  return cm;
}

double false_activation(const ModelState& model,
                        std::span<const SegSample> images,
                        std::span<const int> new_classes,
                        std::span<const int> old_classes) {
  std::array<bool, 256> counted{};
  counted[kBackground] = true;
  for (int c : old_classes) counted[static_cast<std::size_t>(c)] = true;
  double acc = 0.0;
  std::size_t n = 0;
  for (const SegSample& s : images) {
    Tape tape(false);
    const Tensor f = forward_features(tape, model.backbone, s.image_tensor());
    const Tensor p = tape.sigmoid(logits(tape, f, model.bank, new_classes));
    const std::size_t m = new_classes.size();
    auto v = p.data();
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      if (!counted[s.labels[i]]) continue;
      for (std::size_t j = 0; j < m; ++j) acc += v[i * m + j];
      n += m;
    }
  }
  if (n == 0) throw DomainError("false_activation: no old/background pixels");
  return acc / static_cast<double>(n);
}

ScenarioResult run_scenario(const ScenarioPlan& plan, const SamplePools& pools,
                            const TrainConfig& config,
                            const ScenarioOptions& options) {
  config.validate();
  const int num_classes = pools.params.num_classes;
  if (plan.max_class_id() > num_classes) {
    throw ConfigError(fmt::format(
        "scenario schedules class {} but the dataset has {} classes",
        plan.max_class_id(), num_classes));
  }
  const std::size_t n_drift = std::min(config.drift_images, pools.val.size());
  const std::span<const SegSample> drift_images(pools.val.data(), n_drift);

  ScenarioResult result;
  Rng init_rng = Rng(config.seed).fork(0x1A17ULL);
  for (int t = 1; t <= plan.num_steps(); ++t) {
    StepOutcome outcome;
    outcome.step = t;
    const StepDataset data = build_step(pools.train, plan, t);
    spdlog::info("step {}/{}: {} training images, classes [{}]", t,
                 plan.num_steps(), data.train.size(),
                 fmt::join(data.classes, ","));

    if (t == 1) {
      if (options.first_step_model) {
        outcome.model = options.first_step_model->clone(true);
      } else {
        Rng model_rng = Rng(config.seed).fork(0xBA5EULL);
        outcome.model = make_initial_model(config.backbone_channels,
                                           data.classes, model_rng);
        outcome.trace = train_step(outcome.model, data, config, nullptr).trace;
      }
    } else {
      const ModelState& prev_trained = result.steps.back().model;
      const ModelState previous = prev_trained.snapshot();
      const std::vector<int> old = plan.old_classes(t);
      outcome.model =
          init_step(prev_trained, data.classes, config.aux_init_on, init_rng);
      outcome.initial_false_activation =
          false_activation(outcome.model, pools.val, data.classes, old);
      outcome.drift.push_back(
          {t, 0, drift(outcome.model, previous, drift_images, old, t)});
      auto log_drift = [&](int, std::size_t iter) {
        outcome.drift.push_back(
            {t, iter, drift(outcome.model, previous, drift_images, old, t)});
      };
      outcome.trace =
          train_step(outcome.model, data, config, &previous, log_drift).trace;
    }

    outcome.confusion = evaluate(outcome.model, pools.val, num_classes,
                                 config.tau);
    outcome.report = summarize(outcome.confusion, plan, t);
    spdlog::info("step {}: mIoU_b {:.2f} mIoU_all {:.2f}", t,
                 outcome.report.miou_b, outcome.report.miou_all);
    if (options.on_step_complete) options.on_step_complete(outcome);
    result.steps.push_back(std::move(outcome));
  }
  return result;
}

}  // namespace ciss
