#include "ciss/metrics.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "ciss/error.hpp"

namespace ciss {

ConfusionMatrix::ConfusionMatrix(int num_classes) : num_classes_(num_classes) {
  if (num_classes < 1) {
    throw ConfigError(
        fmt::format("confusion matrix needs >= 1 class, got {}", num_classes));
  }
  const auto n = static_cast<std::size_t>(num_classes + 1);
  counts_.assign(n * n, 0);
}

void ConfusionMatrix::check_class(int c) const {
  if (c < 0 || c > num_classes_) {
    throw DomainError(
        fmt::format("class id {} outside 0..{}", c, num_classes_));
  }
}

std::size_t ConfusionMatrix::index(int truth, int predicted) const {
  check_class(truth);
  check_class(predicted);
  return static_cast<std::size_t>(truth) *
             static_cast<std::size_t>(num_classes_ + 1) +
         static_cast<std::size_t>(predicted);
}

void ConfusionMatrix::add(std::span<const std::uint8_t> ground_truth,
                          std::span<const std::uint8_t> prediction) {
  if (ground_truth.size() != prediction.size()) {
    throw ShapeError(fmt::format("confusion matrix: {} labels vs {} predictions",
                                 ground_truth.size(), prediction.size()));
  }
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    ++counts_[index(ground_truth[i], prediction[i])];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) {
    throw ShapeError("confusion matrix: merging different class counts");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::uint64_t ConfusionMatrix::count(int truth, int predicted) const {
  return counts_[index(truth, predicted)];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::true_positives(int c) const {
  return count(c, c);
}

std::uint64_t ConfusionMatrix::false_positives(int c) const {
  check_class(c);
  std::uint64_t n = 0;
  for (int g = 0; g <= num_classes_; ++g) {
    if (g != c) n += count(g, c);
  }
  return n;
}

std::uint64_t ConfusionMatrix::false_negatives(int c) const {
  check_class(c);
  std::uint64_t n = 0;
  for (int p = 0; p <= num_classes_; ++p) {
    if (p != c) n += count(c, p);
  }
  return n;
}

std::optional<double> iou(const ConfusionMatrix& cm, int class_id) {
  const std::uint64_t tp = cm.true_positives(class_id);
  const std::uint64_t denom =
      tp + cm.false_positives(class_id) + cm.false_negatives(class_id);
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

double harmonic_iou(double base, double novel) {
  if (base <= 0.0 || novel <= 0.0) return 0.0;
  return 2.0 * base * novel / (base + novel);
}

namespace {

std::optional<double> mean_percent(
    const std::map<int, std::optional<double>>& per_class,
    std::span<const int> classes) {
  double acc = 0.0;
  std::size_t n = 0;
  for (int c : classes) {
    const auto& v = per_class.at(c);
    if (!v) continue;
    acc += *v;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

}  // namespace

MetricsReport summarize(const ConfusionMatrix& cm, const ScenarioPlan& plan,
                        int step) {
  MetricsReport r;
  r.step = step;
  std::vector<int> base = {kBackground};
  const auto& first = plan.classes(1);
  base.insert(base.end(), first.begin(), first.end());
  std::vector<int> novel;
  for (int t = 2; t <= step; ++t) {
    const auto& c = plan.classes(t);
    novel.insert(novel.end(), c.begin(), c.end());
  }
  std::vector<int> all = base;
  all.insert(all.end(), novel.begin(), novel.end());

  for (int c : all) {
    const auto v = iou(cm, c);
    r.per_class[c] = v ? std::optional<double>(*v * 100.0) : std::nullopt;
  }
  r.miou_b = mean_percent(r.per_class, base).value_or(0.0);
  r.miou_all = mean_percent(r.per_class, all).value_or(0.0);
  if (step >= 2) {
    r.miou_n = mean_percent(r.per_class, novel).value_or(0.0);
    r.hiou = harmonic_iou(r.miou_b, *r.miou_n);
  }
  return r;
}

DriftStats drift(const ModelState& current, const ModelState& previous,
                 std::span<const SegSample> images,
                 std::span<const int> old_classes, int step) {
  if (step < 2) {
    throw DomainError(
        fmt::format("drift: step {} has no previous model", step));
  }
  if (images.empty()) throw ShapeError("drift: no validation images");
  double sq_z = 0.0, sq_plus = 0.0, sq_minus = 0.0;
  std::size_t count = 0;
  for (const SegSample& s : images) {
    const Tensor image = s.image_tensor();
    Tape tape(false);
    const DecomposedLogits now = decompose(
        tape, forward_features(tape, current.backbone, image), current.bank,
        old_classes);
    const DecomposedLogits before = decompose(
        tape, forward_features(tape, previous.backbone, image), previous.bank,
        old_classes);
    auto accumulate = [](double& acc, const Tensor& a, const Tensor& b) {
      auto x = a.data();
      auto y = b.data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        acc += d * d;
      }
    };
    accumulate(sq_z, now.z, before.z);
    accumulate(sq_plus, now.z_plus, before.z_plus);
    accumulate(sq_minus, now.z_minus, before.z_minus);
    count += now.z.size();
  }
  const double n = static_cast<double>(count);
  return {std::sqrt(sq_z / n), std::sqrt(sq_plus / n), std::sqrt(sq_minus / n)};
}

}  // namespace ciss
