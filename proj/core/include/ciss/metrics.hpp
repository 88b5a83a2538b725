#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ciss/model.hpp"
#include "ciss/synthdata.hpp"

namespace ciss {

// (K + 1) x (K + 1) pixel counts indexed by (ground truth, prediction),
// background included as id 0.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(std::span<const std::uint8_t> ground_truth,
           std::span<const std::uint8_t> prediction);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

  int num_classes() const { return num_classes_; }
  std::uint64_t count(int truth, int predicted) const;
  std::uint64_t total() const;
  std::uint64_t true_positives(int c) const;
  std::uint64_t false_positives(int c) const;
  std::uint64_t false_negatives(int c) const;

 private:
  std::size_t index(int truth, int predicted) const;
  void check_class(int c) const;

  int num_classes_;
  std::vector<std::uint64_t> counts_;
};

// TP / (TP + FP + FN) in [0, 1]; nullopt when the class is absent from both
// ground truth and prediction (such classes are excluded from means).
std::optional<double> iou(const ConfusionMatrix& cm, int class_id);

// Harmonic mean; 0 when either input is 0.
double harmonic_iou(double base, double novel);

// All mean values are percentages.
struct MetricsReport {
  int step = 0;
  std::map<int, std::optional<double>> per_class;  // percent
  double miou_b = 0.0;  // background + C_1
  std::optional<double> miou_n;  // C_{2:t}; absent at t = 1
  double miou_all = 0.0;
  std::optional<double> hiou;
};

// Base = background + C_1, novel = C_{2:t}, all = base + novel.
MetricsReport summarize(const ConfusionMatrix& cm, const ScenarioPlan& plan,
                        int step);

struct DriftStats {
  double dz = 0.0;
  double dz_plus = 0.0;
  double dz_minus = 0.0;
};

// Per-entry normalized L2 norms ||x||_2 / sqrt(count) of the change in
// old-class logits and reasoning scores between two models over the given
// validation images.
DriftStats drift(const ModelState& current, const ModelState& previous,
                 std::span<const SegSample> images,
                 std::span<const int> old_classes, int step);

}  // namespace ciss
