#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ciss/tensor.hpp"

namespace ciss {

// Background shares id 0 with the train-time unknown class c_u.
inline constexpr int kBackground = 0;
inline constexpr int kUnknown = 0;
// One distinct hue per class; beyond this, classes stop being separable.
inline constexpr int kMaxClasses = 12;

enum class ShapeKind { kSquare = 0, kDisc = 1, kTriangle = 2, kRing = 3 };

struct Rgb {
  double r = 0.0, g = 0.0, b = 0.0;
};

// Fixed rendering identity of an object class (1-based id).
ShapeKind class_shape(int class_id);
Rgb class_color(int class_id);

struct SegSample {
  int id = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  // height * width * 3 values in [0, 1], row-major, channels last.
  std::vector<double> image;
  // height * width class ids.
  std::vector<std::uint8_t> labels;

  // Sorted ids with at least one pixel, background included when present.
  std::vector<int> classes_present() const;
  bool contains_any(std::span<const int> classes) const;
  // {height, width, 3}, no grad.
  Tensor image_tensor() const;

  bool operator==(const SegSample&) const = default;
};

struct DatasetParams {
  std::uint64_t seed = 1;
  std::size_t n_train = 240;
  std::size_t n_val = 60;
  int num_classes = 6;
  std::size_t height = 32;
  std::size_t width = 32;
  // Fraction of the train pool set aside (not used for training).
  double holdout = 0.0;
};

struct SamplePools {
  DatasetParams params;
  std::vector<SegSample> train;
  std::vector<SegSample> val;
  std::vector<SegSample> holdout;

  bool operator==(const SamplePools& other) const {
    return train == other.train && val == other.val &&
           holdout == other.holdout;
  }
};

// Renders 1-3 non-overlapping instances of distinct classes per image on a
// textured background. Each class is the same (shape, hue) pair everywhere.
// Pure function of `params`.
//
// Coverage: the first instance of sample i has class (i mod K) + 1, so every
// class occurs in at least floor(n / K) images of each pool.
SamplePools generate(const DatasetParams& params);

enum class Setting { kDisjoint, kOverlapped };

std::string_view setting_name(Setting setting);
Setting parse_setting(std::string_view name);

// Ordered partition of the scheduled classes into steps C_1..C_T.
class ScenarioPlan {
 public:
  // "Nb-Nn": classes 1..Nb in step 1, then Nn classes per step up to K.
  static ScenarioPlan parse(std::string_view notation, int num_classes,
                            Setting setting);
  static ScenarioPlan from_schedule(std::vector<std::vector<int>> schedule,
                                    Setting setting);

  int num_steps() const { return static_cast<int>(schedule_.size()); }
  Setting setting() const { return setting_; }
  // Step indices are 1-based throughout.
  const std::vector<int>& classes(int step) const;
  // C_{1:step}.
  std::vector<int> seen_classes(int step) const;
  // C_{1:step-1}.
  std::vector<int> old_classes(int step) const;
  // C_{step+1..T}.
  std::vector<int> future_classes(int step) const;
  std::vector<int> all_classes() const;
  int max_class_id() const;
  std::string notation() const;

 private:
  ScenarioPlan(std::vector<std::vector<int>> schedule, Setting setting);
  void check_step(int step) const;

  std::vector<std::vector<int>> schedule_;
  Setting setting_;
};

struct StepDataset {
  int step = 0;
  std::vector<int> classes;
  // Labels remapped to C_t and kUnknown.
  std::vector<SegSample> train;
};

// Overlapped keeps every image with a pixel of C_t; disjoint also drops
// images showing any future class. Pixels outside C_t become kUnknown.
StepDataset build_step(std::span<const SegSample> pool,
                       const ScenarioPlan& plan, int step);

// Writes <dir>/<split>/<id>.ppm (P6) and <id>.pgm (P5, class id as gray)
// plus <dir>/manifest.json with ids and per-image class histograms.
void export_pools(const SamplePools& pools, const std::filesystem::path& dir);

void write_ppm(const SegSample& sample, const std::filesystem::path& path);
void write_pgm(const SegSample& sample, const std::filesystem::path& path);

}  // namespace ciss
