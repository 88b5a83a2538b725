#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ciss/model.hpp"
#include "ciss/synthdata.hpp"
#include "ciss/tape.hpp"

namespace ciss {

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-12;

struct LossWeights {
  double alpha = 5.0;  // KD
  double beta = 5.0;   // DKD
  double gamma = 1.0;  // positive-term weight inside mBCE

  // Throws ConfigError unless alpha, beta >= 0, gamma > 0, all finite.
  void validate() const;
};

// Per-pixel old-class probabilities from the frozen previous model, each
// {HW, |old classes|}. Never part of a tape.
struct DistillTargets {
  int step = 0;  // the current step t (targets come from step t - 1)
  Tensor p;
  Tensor p_plus;
  Tensor p_minus;
};

DistillTargets distill_targets(const ModelState& previous, const Tensor& image,
                               std::span<const int> old_classes, int step);

// -(1/rows) * sum over (i, c) of
//   pos_weight * t log sigmoid(z) + (1 - t) log(1 - sigmoid(z)).
// targets must match z's shape and lie in [0, 1].
Tensor weighted_bce(Tape& tape, const Tensor& z, const Tensor& targets,
                    double pos_weight);

// Multi-label BCE over the current step's classes. z_novel columns follow
// `novel_classes`; labels must lie in novel_classes or kUnknown.
Tensor mbce(Tape& tape, const Tensor& z_novel,
            std::span<const int> novel_classes,
            std::span<const std::uint8_t> labels, double gamma);

// Distillation on full old-class logits (bias included).
Tensor kd(Tape& tape, const Tensor& z_old, const DistillTargets& targets);

struct DkdLoss {
  Tensor plus;
  Tensor minus;
  Tensor total;
};

// Distillation applied separately to the positive and negative reasoning
// scores (bias excluded).
DkdLoss dkd(Tape& tape, const Tensor& z_plus, const Tensor& z_minus,
            const DistillTargets& targets);

// Trains the auxiliary head to call every pixel negative.
Tensor ac(Tape& tape, const Tensor& z_prime);

struct ObjectiveOptions {
  LossWeights weights;
  bool kd_on = true;
  bool dkd_on = true;
};

struct StepClasses {
  int step = 1;
  std::vector<int> novel;  // C_t
  std::vector<int> old;    // C_{1:t-1}
};

// Batch-mean scalars of every term. Terms that do not apply (t = 1, flag
// off, or zero weight) are constant zeros.
struct ObjectiveTerms {
  Tensor mbce;
  Tensor kd;
  Tensor dkd_plus;
  Tensor dkd_minus;
  Tensor dkd;
  Tensor ac;
  Tensor total;
};

// L = L_mbce + alpha L_kd + beta L_dkd + L_ac, each averaged over the
// batch. `targets` is empty at step 1, otherwise parallel to `batch`.
ObjectiveTerms objective(Tape& tape, const ModelState& model,
                         std::span<const SegSample> batch,
                         std::span<const DistillTargets> targets,
                         const StepClasses& classes,
                         const ObjectiveOptions& options);

}  // namespace ciss
