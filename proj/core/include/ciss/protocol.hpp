#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ciss/losses.hpp"
#include "ciss/metrics.hpp"
#include "ciss/model.hpp"
#include "ciss/synthdata.hpp"

namespace ciss {

struct TrainConfig {
  int epochs = 20;  // per step
  std::size_t batch_size = 8;
  double lr_initial = 0.05;
  double lr_incremental = 0.005;
  double momentum = 0.9;
  double poly_power = 0.9;
  double alpha = 5.0;
  double beta = 5.0;
  double gamma_initial = 2.0;
  double gamma_incremental = 1.0;
  std::uint64_t seed = 1;
  bool kd_on = true;
  bool dkd_on = true;
  bool aux_init_on = true;
  double tau = 0.5;
  std::vector<std::size_t> backbone_channels = {3, 16, 16};
  // Leading validation images used for the drift statistics.
  std::size_t drift_images = 16;

  void validate() const;
  double base_lr(int step) const { return step == 1 ? lr_initial : lr_incremental; }
  LossWeights weights(int step) const;
};

// lr_k = base * (1 - k / total)^power.
double poly_lr(double base, std::size_t iter, std::size_t total, double power);

// v <- momentum * v + g;  theta <- theta - lr * v.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, double momentum);

  void step(double lr);
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
};

// Next-step model: backbone, old heads and the auxiliary head are copied
// from `previous`; each new class head is a copy of the previous auxiliary
// head when `aux_init_on`, otherwise a fresh random head drawn from `rng`.
ModelState init_step(const ModelState& previous,
                     std::span<const int> new_classes, bool aux_init_on,
                     Rng& rng);

struct TraceRow {
  int step = 0;
  int epoch = 0;
  std::size_t iter = 0;
  double lr = 0.0;
  double mbce = 0.0;
  double kd = 0.0;
  double dkd = 0.0;
  double ac = 0.0;
  double total = 0.0;
};

struct StepTrainResult {
  std::vector<TraceRow> trace;
  std::vector<double> epoch_mean_loss;
};

// Called after every epoch with the 1-based epoch and the number of
// iterations completed so far in this step.
using EpochCallback = std::function<void(int epoch, std::size_t iter)>;

// Mini-batch momentum SGD on the full objective with a poly schedule over
// the step's iterations. `previous` must be present iff data.step >= 2.
// Throws NumericError naming the term when a loss or gradient goes non-finite.
StepTrainResult train_step(ModelState& model, const StepDataset& data,
                           const TrainConfig& config,
                           const ModelState* previous,
                           const EpochCallback& on_epoch_end = {});

// Per pixel: background when max_c p(i, c) < tau, else the argmax class
// (lowest id wins ties).
std::vector<std::uint8_t> predict(const ModelState& model, const Tensor& image,
                                  double tau);

ConfusionMatrix evaluate(const ModelState& model,
                         std::span<const SegSample> images, int num_classes,
                         double tau);

// Mean sigmoid probability of `new_classes` over validation pixels whose
// ground truth is background or one of `old_classes`.
double false_activation(const ModelState& model,
                        std::span<const SegSample> images,
                        std::span<const int> new_classes,
                        std::span<const int> old_classes);

struct DriftRow {
  int step = 0;
  std::size_t iter = 0;
  DriftStats stats;
};

struct StepOutcome {
  int step = 0;
  ModelState model;
  MetricsReport report;
  ConfusionMatrix confusion{1};
  std::vector<TraceRow> trace;
  std::vector<DriftRow> drift;
  // false_activation() of the freshly initialized model, steps >= 2.
  std::optional<double> initial_false_activation;
};

struct ScenarioResult {
  std::vector<StepOutcome> steps;
};

struct ScenarioOptions {
  // Reuse an already trained step-1 model instead of training one.
  std::optional<ModelState> first_step_model;
  // Runs after each step finishes.
  std::function<void(const StepOutcome&)> on_step_complete;
};

ScenarioResult run_scenario(const ScenarioPlan& plan, const SamplePools& pools,
                            const TrainConfig& config,
                            const ScenarioOptions& options = {});

}  // namespace ciss
