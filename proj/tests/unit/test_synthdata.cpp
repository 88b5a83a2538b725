#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "ciss/error.hpp"
#include "ciss/synthdata.hpp"

namespace ciss {
namespace {

DatasetParams small_params(std::uint64_t seed = 1) {
  DatasetParams p;
  p.seed = seed;
  p.n_train = 60;
  p.n_val = 12;
  p.height = 24;
  p.width = 24;
  return p;
}

SegSample handmade(std::vector<std::uint8_t> labels) {
  SegSample s;
  s.height = 1;
  s.width = labels.size();
  s.image.assign(labels.size() * 3, 0.5);
  s.labels = std::move(labels);
  return s;
}

TEST(Generate, SameSeedSamePools) {
  EXPECT_TRUE(generate(small_params(1)) == generate(small_params(1)));
  EXPECT_FALSE(generate(small_params(1)) == generate(small_params(2)));
}

TEST(Generate, EveryClassCovered) {
  DatasetParams p;
  p.num_classes = 6;
  p.n_train = 200;
  const SamplePools pools = generate(p);
  std::map<int, int> images_with;
  for (const SegSample& s : pools.train) {
    for (int c : s.classes_present()) ++images_with[c];
  }
  for (int c = 1; c <= 6; ++c) EXPECT_GE(images_with[c], 200 / 6) << "class " << c;
}

TEST(Generate, LabelsOnlyUseDrawnClasses) {
  const SamplePools pools = generate(small_params());
  for (const SegSample& s : pools.train) {
    const auto present = s.classes_present();
    ASSERT_FALSE(present.empty());
    for (int c : present) {
      EXPECT_GE(c, 0);
      EXPECT_LE(c, 6);
    }
    // 1 to 3 instances of distinct classes plus background.
    const auto objects = std::count_if(present.begin(), present.end(),
                                       [](int c) { return c != kBackground; });
    EXPECT_GE(objects, 1);
    EXPECT_LE(objects, 3);
    for (double v : s.image) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Generate, ValIdsFollowTrain) {
  const SamplePools pools = generate(small_params());
  EXPECT_EQ(pools.val.front().id, 60);
  std::set<int> ids;
  for (const auto& s : pools.train) ids.insert(s.id);
  for (const auto& s : pools.val) EXPECT_TRUE(ids.insert(s.id).second);
}

TEST(Generate, HoldoutTakesTrainTail) {
  DatasetParams p = small_params();
  p.holdout = 0.25;
  const SamplePools pools = generate(p);
  EXPECT_EQ(pools.train.size(), 45u);
  EXPECT_EQ(pools.holdout.size(), 15u);
}

TEST(Generate, RejectsBadParams) {
  DatasetParams p = small_params();
  p.num_classes = 1;
  EXPECT_THROW(generate(p), ConfigError);
  p = small_params();
  p.num_classes = kMaxClasses + 1;
  EXPECT_THROW(generate(p), ConfigError);
  p = small_params();
  p.height = 8;
  EXPECT_THROW(generate(p), ConfigError);
  p = small_params();
  p.holdout = 1.0;
  EXPECT_THROW(generate(p), ConfigError);
}

TEST(Generate, ClassIdentityIsFixed) {
  for (int c = 1; c <= kMaxClasses; ++c) {
    EXPECT_EQ(static_cast<int>(class_shape(c)), (c - 1) % 4);
    for (int other = 1; other < c; ++other) {
      const Rgb a = class_color(c), b = class_color(other);
      EXPECT_FALSE(a.r == b.r && a.g == b.g && a.b == b.b);
    }
  }
}

TEST(Plan, ParsesNotation) {
  const ScenarioPlan p = ScenarioPlan::parse("4-1", 6, Setting::kOverlapped);
  EXPECT_EQ(p.num_steps(), 3);
  EXPECT_EQ(p.classes(1), (std::vector<int>{1, 2, 3, 4}));
  EXPECT_EQ(p.classes(3), (std::vector<int>{6}));
  EXPECT_EQ(p.old_classes(3), (std::vector<int>{1, 2, 3, 4, 5}));
  EXPECT_EQ(p.future_classes(2), (std::vector<int>{6}));
  EXPECT_EQ(p.notation(), "4-1");
  const ScenarioPlan q = ScenarioPlan::parse("2-2", 6, Setting::kDisjoint);
  EXPECT_EQ(q.num_steps(), 3);
  EXPECT_EQ(q.classes(2), (std::vector<int>{3, 4}));
}

TEST(Plan, RejectsBadNotation) {
  for (const char* bad : {"", "4", "4-", "a-1", "0-1", "4-0", "4-3", "7-1"}) {
    EXPECT_THROW(ScenarioPlan::parse(bad, 6, Setting::kOverlapped), ConfigError) << bad;
  }
  EXPECT_THROW(ScenarioPlan::from_schedule({{1, 2}, {2}}, Setting::kOverlapped),
               ConfigError);
  EXPECT_EQ(parse_setting("disjoint"), Setting::kDisjoint);
  EXPECT_THROW(parse_setting("mixed"), ConfigError);
}

TEST(BuildStep, OverlappedKeepsAndRemaps) {
  const ScenarioPlan plan =
      ScenarioPlan::from_schedule({{1, 2, 3, 4}, {5}, {6}}, Setting::kOverlapped);
  const SegSample img = handmade({0, 5, 5, 2, 2, 0});
  const StepDataset d = build_step(std::span(&img, 1), plan, 2);
  ASSERT_EQ(d.train.size(), 1u);
  EXPECT_EQ(d.train[0].labels, (std::vector<std::uint8_t>{0, 5, 5, 0, 0, 0}));
}

TEST(BuildStep, DisjointDropsFutureClasses) {
  const ScenarioPlan plan =
      ScenarioPlan::from_schedule({{1, 3, 4, 6}, {5}, {2}}, Setting::kDisjoint);
  const SegSample img = handmade({0, 5, 5, 2, 2, 0});
  EXPECT_THROW(build_step(std::span(&img, 1), plan, 2), ConfigError);
  const ScenarioPlan overlapped =
      ScenarioPlan::from_schedule({{1, 3, 4, 6}, {5}, {2}}, Setting::kOverlapped);
  EXPECT_EQ(build_step(std::span(&img, 1), overlapped, 2).train.size(), 1u);
}

TEST(BuildStep, DisjointIsSubsetOfOverlapped) {
  const SamplePools pools = generate(small_params());
  for (const char* notation : {"4-1", "2-2", "3-3"}) {
    const auto ov = ScenarioPlan::parse(notation, 6, Setting::kOverlapped);
    const auto dj = ScenarioPlan::parse(notation, 6, Setting::kDisjoint);
    for (int t = 1; t <= ov.num_steps(); ++t) {
      std::set<int> ov_ids;
      for (const auto& s : build_step(pools.train, ov, t).train) ov_ids.insert(s.id);
      StepDataset dj_step;
      try {
        dj_step = build_step(pools.train, dj, t);
      } catch (const ConfigError&) {
        continue;  // empty disjoint step: trivially a subset
      }
      for (const auto& s : dj_step.train) {
        EXPECT_TRUE(ov_ids.count(s.id)) << notation << " step " << t;
      }
    }
  }
}

TEST(BuildStep, LabelAlphabetIsCurrentClassesPlusUnknown) {
  const SamplePools pools = generate(small_params());
  const auto plan = ScenarioPlan::parse("2-2", 6, Setting::kOverlapped);
  for (int t = 1; t <= plan.num_steps(); ++t) {
    const StepDataset d = build_step(pools.train, plan, t);
    std::set<int> seen;
    for (const auto& s : d.train) {
      for (auto l : s.labels) seen.insert(l);
      EXPECT_TRUE(s.contains_any(plan.classes(t)));
    }
    std::set<int> expected(plan.classes(t).begin(), plan.classes(t).end());
    expected.insert(kUnknown);
    EXPECT_EQ(seen, expected) << "step " << t;
  }
}

TEST(BuildStep, EmptyResultNamesStepAndSetting) {
  const ScenarioPlan plan = ScenarioPlan::from_schedule({{1}, {2}}, Setting::kDisjoint);
  const SegSample img = handmade({0, 1, 1});
  try {
    build_step(std::span(&img, 1), plan, 2);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("step 2"), std::string::npos) << what;
    EXPECT_NE(what.find("disjoint"), std::string::npos) << what;
  }
}

TEST(Export, WritesImagesAndManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "ciss_export_test";
  std::filesystem::remove_all(dir);
  DatasetParams p = small_params();
  p.n_train = 3;
  p.n_val = 2;
  export_pools(generate(p), dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "train" / "0.ppm"));
  EXPECT_TRUE(std::filesystem::exists(dir / "val" / "4.pgm"));
  EXPECT_EQ(std::filesystem::file_size(dir / "train" / "0.ppm"),
            std::string("P6\n24 24\n255\n").size() + 24 * 24 * 3);
  std::ifstream is(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(is);
  EXPECT_TRUE(manifest.is_object());
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace ciss
