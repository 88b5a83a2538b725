#pragma once

// Shared builders for unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "ciss/losses.hpp"
#include "ciss/model.hpp"
#include "ciss/protocol.hpp"
#include "ciss/random.hpp"
#include "ciss/synthdata.hpp"
#include "ciss/tape.hpp"

namespace ciss::testing {

inline SegSample random_sample(int id, std::size_t h, std::size_t w,
                               std::span<const int> label_alphabet, Rng& rng) {
  SegSample s;
  s.id = id;
  s.height = h;
  s.width = w;
  s.image.resize(h * w * 3);
  for (double& v : s.image) v = rng.uniform();
  s.labels.resize(h * w);
  for (auto& l : s.labels) {
    l = static_cast<std::uint8_t>(label_alphabet[rng.below(label_alphabet.size())]);
  }
  return s;
}

// Step-2 instance with classes {1, 2} old and {3} novel. The current model
// is a perturbed copy of the previous one so every distillation term has a
// non-trivial gradient.
struct GradInstance {
  ModelState previous;
  ModelState model;
  std::vector<SegSample> batch;
  std::vector<DistillTargets> targets;
  StepClasses classes;
};

// Smallest |f_k(i) w_k(c)| over pixels, heads and feature dims, and the
// smallest |pre-activation| of the hidden ReLU layers. Finite differences
// are only meaningful when both are bounded away from zero.
inline double distance_to_kinks(const GradInstance& g) {
  double m = std::numeric_limits<double>::infinity();
  for (const SegSample& s : g.batch) {
    Tape tape(false);
    Tensor x = s.image_tensor();
    const auto& layers = g.model.backbone.layers;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      x = tape.conv2d(x, layers[l].kernel, layers[l].bias);
      if (l + 1 < layers.size()) {
        for (double v : x.data()) m = std::min(m, std::abs(v));
        x = tape.relu(x);
      }
    }
    const std::size_t d = x.dim(2);
    const auto f = x.data();
    for (const ClassHead& h : g.model.bank.heads()) {
      const auto w = h.weight.data();
      for (std::size_t i = 0; i < f.size() / d; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
          m = std::min(m, std::abs(f[i * d + k] * w[k]));
        }
      }
    }
  }
  return m;
}

inline GradInstance try_grad_instance(std::uint64_t seed, std::size_t side,
                                      std::size_t d, std::size_t batch) {
  Rng rng(seed);
  const std::vector<std::size_t> channels = {3, d, d};
  const std::vector<int> base = {1, 2};
  const std::vector<int> novel = {3};
  GradInstance g;
  g.previous = make_initial_model(channels, base, rng).snapshot();
  g.previous.aux.bias.mutable_data()[0] = rng.uniform(-0.5, 0.5);
  Rng init_rng = rng.fork(7);
  g.model = init_step(g.previous, novel, /*aux_init_on=*/false, init_rng);
  for (const NamedTensor& p : g.model.parameters()) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v += rng.uniform(-0.5, 0.5);
  }
  const std::vector<int> alphabet = {kUnknown, 3};
  for (std::size_t b = 0; b < batch; ++b) {
    g.batch.push_back(random_sample(static_cast<int>(b), side, side, alphabet, rng));
    g.targets.push_back(
        distill_targets(g.previous, g.batch.back().image_tensor(), base, 2));
  }
  g.classes = StepClasses{2, novel, base};
  return g;
}

// Resamples until distance_to_kinks >= min_distance.
inline GradInstance make_grad_instance(std::uint64_t seed, double min_distance,
                                       std::size_t side = 4, std::size_t d = 8,
                                       std::size_t batch = 1) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    GradInstance g = try_grad_instance(seed * 1000003 + attempt, side, d, batch);
    if (distance_to_kinks(g) >= min_distance) return g;
  }
}

// Finite differences see the forward dependence of the AC term on the
// backbone, which the detached feature input hides from the tape. For a
// gradient check, swap the live AC value for one computed from features
// captured once at the check point: the value is unchanged and the
// numerical derivative then follows stop-gradient semantics.
inline std::vector<Tensor> frozen_features(const GradInstance& g) {
  std::vector<Tensor> out;
  for (const SegSample& s : g.batch) {
    Tape scratch(false);
    out.push_back(
        forward_features(scratch, g.model.backbone, s.image_tensor()).detach());
  }
  return out;
}

inline Tensor with_frozen_ac(Tape& tape, const GradInstance& g,
                             std::span<const Tensor> features,
                             const Tensor& term, const Tensor& live_ac) {
  Tensor frozen;
  for (const Tensor& f : features) {
    const Tensor a = ac(tape, aux_logit(tape, f, g.model.aux));
    frozen = frozen.defined() ? tape.add(frozen, a) : a;
  }
  frozen = tape.scale(frozen, 1.0 / static_cast<double>(features.size()));
  return tape.add(tape.sub(term, live_ac), frozen);
}

inline std::vector<Tensor> parameter_tensors(const ModelState& m) {
  std::vector<Tensor> out;
  for (const NamedTensor& p : m.parameters()) out.push_back(p.tensor);
  return out;
}

}  // namespace ciss::testing
