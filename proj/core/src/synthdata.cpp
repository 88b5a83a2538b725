#include "ciss/synthdata.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "ciss/error.hpp"
#include "ciss/random.hpp"

namespace ciss {
namespace {

// Hues ordered so that any prefix is spread around the color wheel.
constexpr std::array<double, kMaxClasses> kHues = {
    0.0, 180.0, 60.0, 240.0, 120.0, 300.0, 30.0, 210.0, 90.0, 270.0, 150.0,
    330.0};

Rgb hsv_to_rgb(double hue, double sat, double val) {
  const double c = val * sat;
  const double hp = hue / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb out;
  switch (static_cast<int>(hp) % 6) {
    case 0: out = {c, x, 0.0}; break;
    case 1: out = {x, c, 0.0}; break;
    case 2: out = {0.0, c, x}; break;
    case 3: out = {0.0, x, c}; break;
    case 4: out = {x, 0.0, c}; break;
    default: out = {c, 0.0, x}; break;
  }
  const double m = val - c;
  return {out.r + m, out.g + m, out.b + m};
}

struct Box {
  std::size_t y0, x0, size;
  bool overlaps(const Box& o) const {
    // One pixel of clearance between instances.
    return !(y0 + size + 1 <= o.y0 || o.y0 + o.size + 1 <= y0 ||
             x0 + size + 1 <= o.x0 || o.x0 + o.size + 1 <= x0);
  }
};

bool inside_shape(ShapeKind kind, std::size_t size, std::size_t r,
                  std::size_t c) {
  const double s = static_cast<double>(size);
  const double cy = static_cast<double>(r) + 0.5 - s / 2.0;
  const double cx = static_cast<double>(c) + 0.5 - s / 2.0;
  const double radius = s / 2.0;
  switch (kind) {
    case ShapeKind::kSquare:
      return true;
    case ShapeKind::kDisc:
      return cy * cy + cx * cx <= radius * radius;
    case ShapeKind::kTriangle: {
      // Apex at the top row, base spanning the bottom row.
      const double half_width = (static_cast<double>(r) + 1.0) / 2.0;
      return std::abs(cx) <= half_width;
    }
    case ShapeKind::kRing: {
      const double d2 = cy * cy + cx * cx;
      const double inner = radius * 0.5;
      return d2 <= radius * radius && d2 >= inner * inner;
    }
  }
  return false;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

SegSample render(int id, int first_class, const DatasetParams& p, Rng& rng) {
  const std::size_t h = p.height, w = p.width;
  SegSample s;
  s.id = id;
  s.height = h;
  s.width = w;
  s.image.resize(h * w * 3);
  s.labels.assign(h * w, static_cast<std::uint8_t>(kBackground));

  // Textured background: per-image tone, diagonal stripes, pixel noise.
  const double tone = rng.uniform(0.25, 0.55);
  const double tint = rng.uniform(-0.04, 0.04);
  const double freq = rng.uniform(0.3, 0.9);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double stripe =
          0.08 * std::sin(freq * static_cast<double>(x + y) + phase);
      const double noise = rng.uniform(-0.05, 0.05);
      const double v = tone + stripe + noise;
      double* px = &s.image[(y * w + x) * 3];
      px[0] = clamp01(v + tint);
      px[1] = clamp01(v);
      px[2] = clamp01(v - tint);
    }
  }

  const std::size_t extent = std::min(h, w);
  const std::size_t min_size =
      std::max<std::size_t>(6, static_cast<std::size_t>(0.3 * extent));
  const std::size_t max_size = std::max(
      min_size, static_cast<std::size_t>(0.45 * static_cast<double>(extent)));

  const std::size_t wanted = 1 + rng.below(3);
  std::vector<int> classes = {first_class};
  while (classes.size() < wanted &&
         classes.size() < static_cast<std::size_t>(p.num_classes)) {
    const int c = 1 + static_cast<int>(rng.below(
                          static_cast<std::size_t>(p.num_classes)));
    if (std::find(classes.begin(), classes.end(), c) == classes.end()) {
      classes.push_back(c);
    }
  }

  std::vector<Box> placed;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    bool ok = false;
    Box box{};
    for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
      const std::size_t size = min_size + rng.below(max_size - min_size + 1);
      box = {rng.below(h - size + 1), rng.below(w - size + 1), size};
      ok = std::none_of(placed.begin(), placed.end(),
                        [&](const Box& o) { return o.overlaps(box); });
      // The first instance always fits in an empty canvas.
    }
    if (!ok) continue;
    placed.push_back(box);

    const int cls = classes[k];
    const ShapeKind kind = class_shape(cls);
    const Rgb color = class_color(cls);
    for (std::size_t r = 0; r < box.size; ++r) {
      for (std::size_t c = 0; c < box.size; ++c) {
        if (!inside_shape(kind, box.size, r, c)) continue;
        const std::size_t y = box.y0 + r, x = box.x0 + c;
        double* px = &s.image[(y * w + x) * 3];
        const double jitter = rng.uniform(-0.04, 0.04);
        px[0] = clamp01(color.r + jitter);
        px[1] = clamp01(color.g + jitter);
        px[2] = clamp01(color.b + jitter);
        s.labels[y * w + x] = static_cast<std::uint8_t>(cls);
      }
    }
  }
  return s;
}

}  // namespace

ShapeKind class_shape(int class_id) {
  return static_cast<ShapeKind>((class_id - 1) % 4);
}

Rgb class_color(int class_id) {
  if (class_id < 1 || class_id > kMaxClasses) {
    throw DomainError(fmt::format("class_color: class id {} out of range",
                                  class_id));
  }
  return hsv_to_rgb(kHues[static_cast<std::size_t>(class_id - 1)], 0.85,
                    0.9);
}

std::vector<int> SegSample::classes_present() const {
  std::array<bool, 256> seen{};
  for (std::uint8_t l : labels) seen[l] = true;
  std::vector<int> out;
  for (int c = 0; c < 256; ++c) {
    if (seen[static_cast<std::size_t>(c)]) out.push_back(c);
  }
  return out;
}

bool SegSample::contains_any(std::span<const int> classes) const {
  std::array<bool, 256> wanted{};
  for (int c : classes) {
    if (c >= 0 && c < 256) wanted[static_cast<std::size_t>(c)] = true;
  }
  return std::any_of(labels.begin(), labels.end(),
                     [&](std::uint8_t l) { return wanted[l]; });
}

Tensor SegSample::image_tensor() const {
  return Tensor::from({height, width, 3}, image);
}

SamplePools generate(const DatasetParams& params) {
  if (params.num_classes < 2) {
    throw ConfigError(fmt::format("generate: need at least 2 classes, got {}",
                                  params.num_classes));
  }
  if (params.num_classes > kMaxClasses) {
    throw ConfigError(fmt::format(
        "generate: {} classes exceed the {} distinguishable (shape, color) "
        "identities",
        params.num_classes, kMaxClasses));
  }
  if (params.height < 16 || params.width < 16) {
    throw ConfigError(fmt::format("generate: image {}x{} smaller than 16x16",
                                  params.height, params.width));
  }
  if (params.n_train < 1 || params.n_val < 1) {
    throw ConfigError("generate: sample counts must be >= 1");
  }
  if (!(params.holdout >= 0.0 && params.holdout < 1.0)) {
    throw ConfigError(fmt::format("generate: holdout {} outside [0, 1)",
                                  params.holdout));
  }

  SamplePools pools;
  pools.params = params;
  Rng root(params.seed);
  Rng train_rng = root.fork(1);
  Rng val_rng = root.fork(2);
  const auto k = static_cast<std::size_t>(params.num_classes);

  const auto n_hold = static_cast<std::size_t>(
      std::floor(params.holdout * static_cast<double>(params.n_train)));
  const std::size_t n_fit = params.n_train - n_hold;
  for (std::size_t i = 0; i < params.n_train; ++i) {
    SegSample s = render(static_cast<int>(i), static_cast<int>(i % k) + 1,
                         params, train_rng);
    (i < n_fit ? pools.train : pools.holdout).push_back(std::move(s));
  }
  for (std::size_t i = 0; i < params.n_val; ++i) {
    pools.val.push_back(render(static_cast<int>(params.n_train + i),
                               static_cast<int>(i % k) + 1, params, val_rng));
  }
  return pools;
}

std::string_view setting_name(Setting setting) {
  return setting == Setting::kDisjoint ? "disjoint" : "overlapped";
}

Setting parse_setting(std::string_view name) {
  if (name == "disjoint") return Setting::kDisjoint;
  if (name == "overlapped") return Setting::kOverlapped;
  throw ConfigError(fmt::format(
      "unknown setting '{}' (expected disjoint or overlapped)", name));
}

ScenarioPlan::ScenarioPlan(std::vector<std::vector<int>> schedule,
                           Setting setting)
    : schedule_(std::move(schedule)), setting_(setting) {}

ScenarioPlan ScenarioPlan::parse(std::string_view notation, int num_classes,
                                 Setting setting) {
  const auto dash = notation.find('-');
  int nb = 0, nn = 0;
  auto parse_int = [&](std::string_view text, int& out) {
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size();
  };
  if (dash == std::string_view::npos ||
      !parse_int(notation.substr(0, dash), nb) ||
      !parse_int(notation.substr(dash + 1), nn)) {
    throw ConfigError(
        fmt::format("scenario '{}' is not of the form Nb-Nn", notation));
  }
  if (nb < 1 || nn < 1 || nb > num_classes) {
    throw ConfigError(fmt::format("scenario '{}' invalid for {} classes",
                                  notation, num_classes));
  }
  if ((num_classes - nb) % nn != 0) {
    throw ConfigError(fmt::format(
        "scenario '{}': {} remaining classes do not split into steps of {}",
        notation, num_classes - nb, nn));
  }
  std::vector<std::vector<int>> schedule;
  std::vector<int> first(static_cast<std::size_t>(nb));
  std::iota(first.begin(), first.end(), 1);
  schedule.push_back(std::move(first));
  for (int c = nb + 1; c <= num_classes; c += nn) {
    std::vector<int> step(static_cast<std::size_t>(nn));
    std::iota(step.begin(), step.end(), c);
    schedule.push_back(std::move(step));
  }
  return from_schedule(std::move(schedule), setting);
}

ScenarioPlan ScenarioPlan::from_schedule(
    std::vector<std::vector<int>> schedule, Setting setting) {
  if (schedule.empty()) throw ConfigError("scenario: empty schedule");
  std::set<int> seen;
  for (std::size_t t = 0; t < schedule.size(); ++t) {
    if (schedule[t].empty()) {
      throw ConfigError(fmt::format("scenario: step {} has no classes", t + 1));
    }
    for (int c : schedule[t]) {
      if (c < 1 || c > kMaxClasses) {
        throw ConfigError(fmt::format("scenario: class id {} out of range", c));
      }
      if (!seen.insert(c).second) {
        throw ConfigError(
            fmt::format("scenario: class {} scheduled more than once", c));
      }
    }
    std::sort(schedule[t].begin(), schedule[t].end());
  }
  return ScenarioPlan(std::move(schedule), setting);
}

void ScenarioPlan::check_step(int step) const {
  if (step < 1 || step > num_steps()) {
    throw ConfigError(
        fmt::format("scenario: step {} outside 1..{}", step, num_steps()));
  }
}

const std::vector<int>& ScenarioPlan::classes(int step) const {
  check_step(step);
  return schedule_[static_cast<std::size_t>(step - 1)];
}

std::vector<int> ScenarioPlan::seen_classes(int step) const {
  check_step(step);
  std::vector<int> out;
  for (int t = 1; t <= step; ++t) {
    const auto& c = classes(t);
    out.insert(out.end(), c.begin(), c.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> ScenarioPlan::old_classes(int step) const {
  check_step(step);
  return step == 1 ? std::vector<int>{} : seen_classes(step - 1);
}

std::vector<int> ScenarioPlan::future_classes(int step) const {
  check_step(step);
  std::vector<int> out;
  for (int t = step + 1; t <= num_steps(); ++t) {
    const auto& c = classes(t);
    out.insert(out.end(), c.begin(), c.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> ScenarioPlan::all_classes() const {
  return seen_classes(num_steps());
}

int ScenarioPlan::max_class_id() const { return all_classes().back(); }

std::string ScenarioPlan::notation() const {
  const std::size_t nb = schedule_.front().size();
  const std::size_t nn = schedule_.size() > 1 ? schedule_[1].size() : 0;
  return fmt::format("{}-{}", nb, nn);
}

StepDataset build_step(std::span<const SegSample> pool,
                       const ScenarioPlan& plan, int step) {
  StepDataset out;
  out.step = step;
  out.classes = plan.classes(step);
  const std::vector<int> future = plan.future_classes(step);

  std::array<bool, 256> keep_label{};
  for (int c : out.classes) keep_label[static_cast<std::size_t>(c)] = true;

  for (const SegSample& sample : pool) {
    if (!sample.contains_any(out.classes)) continue;
    if (plan.setting() == Setting::kDisjoint && sample.contains_any(future)) {
      continue;
    }
    SegSample remapped = sample;
    for (std::uint8_t& l : remapped.labels) {
      if (!keep_label[l]) l = static_cast<std::uint8_t>(kUnknown);
    }
    out.train.push_back(std::move(remapped));
  }
  if (out.train.empty()) {
    throw ConfigError(fmt::format(
        "build_step: no training images for step {} under the {} setting",
        step, setting_name(plan.setting())));
  }
  return out;
}

void write_ppm(const SegSample& sample, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(fmt::format("cannot open {}", path.string()));
  os << "P6\n" << sample.width << ' ' << sample.height << "\n255\n";
  std::vector<char> bytes(sample.image.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<char>(
        static_cast<unsigned char>(std::lround(sample.image[i] * 255.0)));
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError(fmt::format("write failed: {}", path.string()));
}

void write_pgm(const SegSample& sample, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(fmt::format("cannot open {}", path.string()));
  os << "P5\n" << sample.width << ' ' << sample.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(sample.labels.data()),
           static_cast<std::streamsize>(sample.labels.size()));
  if (!os) throw IoError(fmt::format("write failed: {}", path.string()));
}

void export_pools(const SamplePools& pools, const std::filesystem::path& dir) {
  nlohmann::json manifest;
  manifest["seed"] = pools.params.seed;
  manifest["num_classes"] = pools.params.num_classes;
  manifest["height"] = pools.params.height;
  manifest["width"] = pools.params.width;

  auto dump_split = [&](std::string_view name,
                        const std::vector<SegSample>& samples) {
    const auto split_dir = dir / std::string(name);
    std::error_code ec;
    std::filesystem::create_directories(split_dir, ec);
    if (ec) {
      throw IoError(fmt::format("cannot create {}: {}", split_dir.string(),
                                ec.message()));
    }
    nlohmann::json entries = nlohmann::json::array();
    for (const SegSample& s : samples) {
      write_ppm(s, split_dir / fmt::format("{}.ppm", s.id));
      write_pgm(s, split_dir / fmt::format("{}.pgm", s.id));
      std::map<int, std::size_t> histogram;
      for (std::uint8_t l : s.labels) ++histogram[l];
      nlohmann::json hist = nlohmann::json::object();
      for (auto [c, n] : histogram) hist[std::to_string(c)] = n;
      entries.push_back({{"id", s.id}, {"histogram", hist}});
    }
    manifest[std::string(name)] = std::move(entries);
  };
  dump_split("train", pools.train);
  dump_split("val", pools.val);
  if (!pools.holdout.empty()) dump_split("holdout", pools.holdout);

  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError(fmt::format("cannot write manifest in {}", dir.string()));
  os << manifest.dump(2) << '\n';
}

}  // namespace ciss
