#include <cmath>

#include <gtest/gtest.h>

#include "ciss/error.hpp"
#include "ciss/metrics.hpp"
#include "ciss/random.hpp"
#include "fixtures.hpp"

namespace ciss {
namespace {

using Labels = std::vector<std::uint8_t>;

TEST(Iou, PerfectPrediction) {
  ConfusionMatrix cm(3);
  const Labels gt = {0, 1, 1, 2, 3, 3};
  cm.add(gt, gt);
  for (int c = 0; c <= 3; ++c) EXPECT_EQ(iou(cm, c), 1.0);
}

TEST(Iou, DisjointMasks) {
  ConfusionMatrix cm(1);
  cm.add(Labels{1, 1, 0, 0}, Labels{0, 0, 1, 1});
  EXPECT_EQ(iou(cm, 1), 0.0);
}

TEST(Iou, PartialOverlapByCounting) {
  // GT mask {0..3}, predicted mask {2..5}.
  const Labels gt = {1, 1, 1, 1, 0, 0, 0, 0};
  const Labels pr = {0, 0, 1, 1, 1, 1, 0, 0};
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    inter += gt[i] == 1 && pr[i] == 1;
    uni += gt[i] == 1 || pr[i] == 1;
  }
  ConfusionMatrix cm(1);
  cm.add(gt, pr);
  EXPECT_DOUBLE_EQ(*iou(cm, 1), static_cast<double>(inter) / static_cast<double>(uni));
  EXPECT_NEAR(*iou(cm, 1), 2.0 / 6.0, 1e-4);
}

TEST(Iou, AbsentClassIsUndefined) {
  ConfusionMatrix cm(2);
  cm.add(Labels{0, 1}, Labels{0, 1});
  EXPECT_FALSE(iou(cm, 2).has_value());
}

TEST(ConfusionMatrix, RejectsBadIds) {
  ConfusionMatrix cm(2);
  EXPECT_THROW(cm.add(Labels{3}, Labels{0}), DomainError);
  EXPECT_THROW(cm.add(Labels{0, 1}, Labels{0}), ShapeError);
}

TEST(ConfusionMatrix, AccumulationIsAssociative) {
  Rng rng(8);
  std::vector<Labels> gts, prs;
  for (int i = 0; i < 6; ++i) {
    Labels g(30), p(30);
    for (auto& v : g) v = static_cast<std::uint8_t>(rng.below(4));
    for (auto& v : p) v = static_cast<std::uint8_t>(rng.below(4));
    gts.push_back(g);
    prs.push_back(p);
  }
  ConfusionMatrix global(3), summed(3);
  Labels all_g, all_p;
  for (int i = 0; i < 6; ++i) {
    all_g.insert(all_g.end(), gts[i].begin(), gts[i].end());
    all_p.insert(all_p.end(), prs[i].begin(), prs[i].end());
    ConfusionMatrix one(3);
    one.add(gts[i], prs[i]);
    summed += one;
  }
  global.add(all_g, all_p);
  EXPECT_TRUE(global == summed);
  EXPECT_EQ(global.total(), 180u);
}

TEST(HarmonicIou, TableOneValues) {
  EXPECT_NEAR(harmonic_iou(69.60, 25.60), 37.43, 0.01);
  EXPECT_NEAR(harmonic_iou(71.80, 43.30), 54.02, 0.01);
  EXPECT_NEAR(harmonic_iou(46.20, 12.90), 20.17, 0.01);
}

TEST(HarmonicIou, Properties) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(0.1, 100), b = rng.uniform(0.1, 100);
    const double h = harmonic_iou(a, b);
    EXPECT_EQ(h, harmonic_iou(b, a));
    EXPECT_LE(h, (a + b) / 2 + 1e-12);
    EXPECT_LE(h, 2 * std::min(a, b) + 1e-12);
    EXPECT_NEAR(harmonic_iou(a, a), a, 1e-12);
  }
  EXPECT_EQ(harmonic_iou(0.0, 50.0), 0.0);
}

TEST(Summarize, FirstStepHasNoNovelMetrics) {
  const auto plan = ScenarioPlan::parse("2-1", 3, Setting::kOverlapped);
  ConfusionMatrix cm(3);
  cm.add(Labels{0, 1, 2, 2}, Labels{0, 1, 2, 0});
  const MetricsReport r = summarize(cm, plan, 1);
  EXPECT_FALSE(r.miou_n.has_value());
  EXPECT_FALSE(r.hiou.has_value());
  // Background: 1/2, class 1: 1, class 2: 1/2.
  EXPECT_NEAR(r.miou_b, 100.0 * (0.5 + 1.0 + 0.5) / 3.0, 1e-12);
  EXPECT_EQ(r.per_class.size(), 3u);
}

TEST(Summarize, AllLiesBetweenBaseAndNovel) {
  const auto plan = ScenarioPlan::parse("2-2", 4, Setting::kOverlapped);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ConfusionMatrix cm(4);
    Labels g(200), p(200);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = static_cast<std::uint8_t>(rng.below(5));
      p[i] = rng.uniform() < 0.6 ? g[i] : static_cast<std::uint8_t>(rng.below(5));
    }
    cm.add(g, p);
    const MetricsReport r = summarize(cm, plan, 2);
    ASSERT_TRUE(r.miou_n.has_value());
    EXPECT_GE(r.miou_all, std::min(r.miou_b, *r.miou_n) - 1e-12);
    EXPECT_LE(r.miou_all, std::max(r.miou_b, *r.miou_n) + 1e-12);
    EXPECT_NEAR(*r.hiou, harmonic_iou(r.miou_b, *r.miou_n), 1e-12);
  }
}

class DriftTest : public ::testing::Test {
 protected:
  testing::GradInstance g = testing::make_grad_instance(11, 0.0);
  std::vector<int> old = {1, 2};
};

TEST_F(DriftTest, IdenticalModelsHaveNoDrift) {
  const DriftStats d = drift(g.previous, g.previous, g.batch, old, 2);
  EXPECT_EQ(d.dz, 0.0);
  EXPECT_EQ(d.dz_plus, 0.0);
  EXPECT_EQ(d.dz_minus, 0.0);
}

TEST_F(DriftTest, BiasShiftMovesOnlyTheFullLogit) {
  ModelState shifted = g.previous.snapshot();
  shifted.bank.head(1).bias.mutable_data()[0] += 0.5;
  const DriftStats d = drift(shifted, g.previous, g.batch, old, 2);
  EXPECT_EQ(d.dz_plus, 0.0);
  EXPECT_EQ(d.dz_minus, 0.0);
  // Half the entries (class 1 of {1, 2}) move by 0.5.
  EXPECT_NEAR(d.dz, std::sqrt(0.25 / 2.0), 1e-12);
}

TEST_F(DriftTest, NegativeOnlyChangeMatchesFullChange) {
  // Scaling the negative products only: zero the weights that produce them
  // for every pixel is not possible in general, so use d = 1 features of
  // fixed sign instead.
  ModelState a = g.previous.snapshot();
  ModelState b = g.previous.snapshot();
  for (ConvLayer& l : a.backbone.layers) {
    for (double& v : l.kernel.mutable_data()) v = 0.0;
  }
  a.backbone.layers.back().bias.mutable_data()[0] = 1.0;  // f_0 = 1, others 0
  for (std::size_t k = 1; k < a.backbone.layers.back().bias.size(); ++k) {
    a.backbone.layers.back().bias.mutable_data()[k] = 0.0;
  }
  b.backbone = a.snapshot().backbone;
  a.bank.head(1).weight.mutable_data()[0] = -0.5;
  b.bank.head(1).weight.mutable_data()[0] = -1.5;
  const DriftStats d = drift(a, b, g.batch, old, 2);
  EXPECT_EQ(d.dz_plus, 0.0);
  EXPECT_GT(d.dz, 0.0);
  EXPECT_NEAR(d.dz, d.dz_minus, 1e-15);
}

TEST_F(DriftTest, FirstStepIsAnError) {
  EXPECT_THROW(drift(g.previous, g.previous, g.batch, old, 1), DomainError);
}

}  // namespace
}  // namespace ciss
