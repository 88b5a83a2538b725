#include <cmath>

#include <gtest/gtest.h>

#include "ciss/error.hpp"
#include "ciss/gradcheck.hpp"
#include "ciss/losses.hpp"
#include "fixtures.hpp"

namespace ciss {
namespace {

// Independent reference: -(t log p + (1 - t) log(1 - p)).
double bce(double t, double p) { return -(t * std::log(p) + (1 - t) * std::log(1 - p)); }

DistillTargets constant_targets(double p, double p_plus, double p_minus) {
  DistillTargets t;
  t.step = 2;
  t.p = Tensor::from({1, 1}, {p});
  t.p_plus = Tensor::from({1, 1}, {p_plus});
  t.p_minus = Tensor::from({1, 1}, {p_minus});
  return t;
}

TEST(Mbce, PositivePixelAtZeroLogit) {
  Tape tape;
  const std::vector<int> classes = {3};
  const std::vector<std::uint8_t> labels = {3};
  const Tensor z = Tensor::from({1, 1}, {0.0});
  EXPECT_NEAR(mbce(tape, z, classes, labels, 1.0).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(mbce(tape, z, classes, labels, 1.0).item(), 0.693147, 1e-6);
  EXPECT_NEAR(mbce(tape, z, classes, labels, 2.0).item(), 1.386294, 1e-6);
}

TEST(Mbce, UnknownPixelUsesOnlyTheNegativeTerm) {
  Tape tape;
  const std::vector<int> classes = {3};
  const std::vector<std::uint8_t> labels = {kUnknown};
  const Tensor z = Tensor::from({1, 1}, {0.0});
  EXPECT_NEAR(mbce(tape, z, classes, labels, 1.0).item(), 0.693147, 1e-6);
  // gamma only touches the positive term.
  EXPECT_NEAR(mbce(tape, z, classes, labels, 5.0).item(), 0.693147, 1e-6);
}

TEST(Mbce, RejectsForeignLabels) {
  Tape tape;
  const std::vector<int> classes = {3};
  const std::vector<std::uint8_t> labels = {2};
  EXPECT_THROW(mbce(tape, Tensor::from({1, 1}, {0.0}), classes, labels, 1.0),
               DomainError);
}

TEST(Kd, MatchingProbabilities) {
  Tape tape;
  const double logit = std::log(0.8 / 0.2);
  const double value = kd(tape, Tensor::from({1, 1}, {logit}),
                          constant_targets(0.8, 0.5, 0.5)).item();
  EXPECT_NEAR(value, bce(0.8, 0.8), 1e-12);
  EXPECT_NEAR(value, 0.500402, 1e-6);
}

TEST(Kd, SaturatedTargetGoesToZero) {
  Tape tape;
  const double value = kd(tape, Tensor::from({1, 1}, {40.0}),
                          constant_targets(1.0, 0.5, 0.5)).item();
  EXPECT_LT(value, 1e-12);
  EXPECT_GE(value, 0.0);
}

TEST(Kd, StationaryAtTarget) {
  Tensor z = Tensor::from({1, 1}, {std::log(0.8 / 0.2)}, true);
  Tape tape;
  tape.backward(kd(tape, z, constant_targets(0.8, 0.5, 0.5)));
  EXPECT_LT(std::abs(z.grad()[0]), 1e-12);
}

TEST(Kd, RequiresPreviousStep) {
  Tape tape;
  DistillTargets t = constant_targets(0.5, 0.5, 0.5);
  t.step = 1;
  EXPECT_THROW(kd(tape, Tensor::from({1, 1}, {0.0}), t), DomainError);
  EXPECT_THROW(dkd(tape, Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {0.0}), t),
               DomainError);
}

TEST(Dkd, TwoSymmetricCrossEntropies) {
  Tape tape;
  const DkdLoss d = dkd(tape, Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {0.0}),
                        constant_targets(0.5, 0.5, 0.5));
  EXPECT_NEAR(d.total.item(), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(d.total.item(), 1.386294, 1e-6);
}

TEST(Dkd, NegativeOnlyPerturbationMovesOnlyTheNegativeTerm) {
  // One pixel: f = [1, -1], w = [0.5, 0.5]; products [0.5, -0.5]. Nudging
  // w_1 changes only the negative product.
  ClassifierBank bank;
  bank.add({1, Tensor::from({2}, {0.5, 0.5}), Tensor::scalar(0.1)});
  const Tensor f = Tensor::from({1, 2}, {1.0, -1.0});
  const std::vector<int> cls = {1};
  const DistillTargets t = constant_targets(0.5, 0.6, 0.4);
  auto terms = [&] {
    Tape tape(false);
    const auto dec = decompose(tape, f, bank, cls);
    const DkdLoss d = dkd(tape, dec.z_plus, dec.z_minus, t);
    return std::pair{d.plus.item(), d.minus.item()};
  };
  const auto before = terms();
  bank.head(1).weight.mutable_data()[1] += 1e-3;
  const auto after = terms();
  EXPECT_EQ(before.first, after.first);
  EXPECT_NE(before.second, after.second);
}

TEST(Ac, ZeroAndLargeNegativeLogits) {
  Tape tape;
  EXPECT_NEAR(ac(tape, Tensor::zeros({4, 1})).item(), 0.693147, 1e-6);
  EXPECT_LT(ac(tape, Tensor::full({4, 1}, -60.0)).item(), 1.01e-12);
  EXPECT_THROW(ac(tape, Tensor::zeros({4, 2})), ShapeError);
}

TEST(Losses, FiniteAndNonNegativeForExtremeLogits) {
  Tape tape;
  const Tensor z = Tensor::from({1, 4}, {-800.0, -30.0, 30.0, 800.0});
  const Tensor t = Tensor::from({1, 4}, {1.0, 0.0, 1.0, 0.0});
  const double v = weighted_bce(tape, z, t, 1.0).item();
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GE(v, 0.0);
  // Clamped: a hopeless pixel costs at most -log(1e-12) per entry.
  EXPECT_LE(v, 2 * -std::log(kProbClamp) + 1e-9);
}

TEST(Objective, FirstStepIsMbcePlusAc) {
  testing::GradInstance g = testing::make_grad_instance(3, 0.0);
  const StepClasses first{1, {1, 2}, {}};
  std::vector<SegSample> batch = g.batch;
  for (auto& s : batch) {
    for (auto& l : s.labels) l = l == 3 ? 1 : l;
  }
  Tape tape;
  const ObjectiveTerms o = objective(tape, g.model, batch, {}, first, {});
  EXPECT_EQ(o.kd.item(), 0.0);
  EXPECT_EQ(o.dkd.item(), 0.0);
  EXPECT_NEAR(o.total.item(), o.mbce.item() + o.ac.item(), 1e-15);
}

TEST(Objective, ZeroWeightsDropDistillation) {
  testing::GradInstance g = testing::make_grad_instance(4, 0.0);
  ObjectiveOptions opt;
  opt.weights.alpha = 0;
  opt.weights.beta = 0;
  Tape tape;
  const ObjectiveTerms o = objective(tape, g.model, g.batch, {}, g.classes, opt);
  EXPECT_NEAR(o.total.item(), o.mbce.item() + o.ac.item(), 1e-15);
}

TEST(Objective, DefaultWeightsMatchComponentSum) {
  testing::GradInstance g = testing::make_grad_instance(5, 0.0, 4, 8, 2);
  Tape tape;
  const ObjectiveTerms o = objective(tape, g.model, g.batch, g.targets, g.classes, {});
  EXPECT_GT(o.kd.item(), 0.0);
  EXPECT_GT(o.dkd.item(), 0.0);
  EXPECT_NEAR(o.total.item(),
              o.mbce.item() + 5.0 * o.kd.item() + 5.0 * o.dkd.item() + o.ac.item(),
              1e-12);
  EXPECT_NEAR(o.dkd.item(), o.dkd_plus.item() + o.dkd_minus.item(), 1e-15);

  // Recompute mBCE for the first sample from scratch.
  Tape ref(false);
  const SegSample& s = g.batch[0];
  const Tensor f = forward_features(ref, g.model.backbone, s.image_tensor());
  const Tensor z = logits(ref, f, g.model.bank, std::vector<int>{3});
  double acc = 0.0;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z.at(i, 0)));
    acc += s.labels[i] == 3 ? -std::log(p) : -std::log(1 - p);
  }
  Tape single;
  const ObjectiveTerms one = objective(single, g.model, std::span(g.batch).first(1),
                                       std::span(g.targets).first(1), g.classes, {});
  EXPECT_NEAR(one.mbce.item(), acc / static_cast<double>(s.labels.size()), 1e-12);
}

TEST(Objective, DistillationGradientVanishesAtCopiedModel) {
  testing::GradInstance g = testing::make_grad_instance(6, 0.0);
  // Current model := previous model plus the novel head.
  Rng rng(1);
  ModelState copy = init_step(g.previous, g.classes.novel, true, rng);
  for (auto pick : {0, 1}) {
    for (const NamedTensor& p : copy.parameters()) {
      Tensor t = p.tensor;
      t.zero_grad();
    }
    Tape tape;
    const ObjectiveTerms o = objective(tape, copy, g.batch, g.targets, g.classes, {});
    tape.backward(pick == 0 ? o.kd : o.dkd);
    double worst = 0.0;
    for (const NamedTensor& p : copy.parameters()) {
      for (double v : p.tensor.grad()) worst = std::max(worst, std::abs(v));
    }
    EXPECT_LE(worst, 1e-9) << (pick == 0 ? "kd" : "dkd");
  }
}

TEST(Objective, TotalGradientMatchesFiniteDifferences) {
  testing::GradInstance g = testing::make_grad_instance(7, 1e-3);
  const std::vector<Tensor> frozen = testing::frozen_features(g);
  std::vector<Tensor> params = testing::parameter_tensors(g.model);
  const GradCheckReport r = check_gradients(
      [&](Tape& tape) {
        const ObjectiveTerms o = objective(tape, g.model, g.batch, g.targets, g.classes, {});
        return testing::with_frozen_ac(tape, g, frozen, o.total, o.ac);
      },
      params);
  EXPECT_TRUE(r.passed) << r.max_rel_error << " at " << r.worst_param << "["
                        << r.worst_index << "]";
}

TEST(Objective, MissingTargetsAreAnError) {
  testing::GradInstance g = testing::make_grad_instance(8, 0.0);
  Tape tape;
  EXPECT_THROW(objective(tape, g.model, g.batch, {}, g.classes, {}), ShapeError);
}

TEST(LossWeights, Validation) {
  EXPECT_THROW((LossWeights{-1, 5, 1}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{5, 5, 0}.validate()), ConfigError);
  EXPECT_NO_THROW((LossWeights{0, 0, 1}.validate()));
}

}  // namespace
}  // namespace ciss
