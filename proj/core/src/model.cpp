#include "ciss/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "ciss/error.hpp"

namespace ciss {
namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor copy_with_grad(const Tensor& t, bool requires_grad) {
  Tensor c = t.clone();
  c.set_requires_grad(requires_grad);
  return c;
}

}  // namespace

Backbone Backbone::make(std::span<const std::size_t> channels, Rng& rng) {
  if (channels.size() < 2) {
    throw ConfigError("backbone: need at least input and one output width");
  }
  Backbone b;
  for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
    const std::size_t in = channels[i], out = channels[i + 1];
    if (in == 0 || out == 0) throw ConfigError("backbone: zero channel width");
    const double bound = std::sqrt(6.0 / static_cast<double>(9 * in));
    ConvLayer layer;
    layer.kernel = uniform_tensor({out, 3, 3, in}, bound, rng);
    layer.bias = Tensor::zeros({out});
    b.layers.push_back(std::move(layer));
  }
  return b;
}

std::size_t Backbone::input_channels() const {
  return layers.front().kernel.dim(3);
}

std::size_t Backbone::feature_dim() const {
  return layers.back().kernel.dim(0);
}

void ClassifierBank::add(ClassHead head) {
  if (contains(head.class_id)) {
    throw ConfigError(
        fmt::format("classifier bank already has class {}", head.class_id));
  }
  auto pos = std::lower_bound(
      heads_.begin(), heads_.end(), head.class_id,
      [](const ClassHead& h, int id) { return h.class_id < id; });
  heads_.insert(pos, std::move(head));
}

bool ClassifierBank::contains(int class_id) const {
  return std::any_of(heads_.begin(), heads_.end(),
                     [&](const ClassHead& h) { return h.class_id == class_id; });
}

const ClassHead& ClassifierBank::head(int class_id) const {
  for (const ClassHead& h : heads_) {
    if (h.class_id == class_id) return h;
  }
  throw DomainError(fmt::format("classifier bank has no class {}", class_id));
}

ClassHead& ClassifierBank::head(int class_id) {
  return const_cast<ClassHead&>(std::as_const(*this).head(class_id));
}

std::vector<int> ClassifierBank::class_ids() const {
  std::vector<int> ids;
  ids.reserve(heads_.size());
  for (const ClassHead& h : heads_) ids.push_back(h.class_id);
  return ids;
}

ModelState ModelState::clone(bool requires_grad) const {
  ModelState out;
  out.step = step;
  for (const ConvLayer& l : backbone.layers) {
    out.backbone.layers.push_back({copy_with_grad(l.kernel, requires_grad),
                                   copy_with_grad(l.bias, requires_grad)});
  }
  for (const ClassHead& h : bank.heads()) {
    out.bank.add({h.class_id, copy_with_grad(h.weight, requires_grad),
                  copy_with_grad(h.bias, requires_grad)});
  }
  out.aux.weight = copy_with_grad(aux.weight, requires_grad);
  out.aux.bias = copy_with_grad(aux.bias, requires_grad);
  return out;
}

std::vector<NamedTensor> ModelState::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < backbone.layers.size(); ++i) {
    out.push_back({fmt::format("backbone.{}.kernel", i),
                   backbone.layers[i].kernel});
    out.push_back({fmt::format("backbone.{}.bias", i),
                   backbone.layers[i].bias});
  }
  for (const ClassHead& h : bank.heads()) {
    out.push_back({fmt::format("head.{}.weight", h.class_id), h.weight});
    out.push_back({fmt::format("head.{}.bias", h.class_id), h.bias});
  }
  out.push_back({"aux.weight", aux.weight});
  out.push_back({"aux.bias", aux.bias});
  return out;
}

std::uint64_t ModelState::fingerprint() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const NamedTensor& p : parameters()) {
    for (double v : p.tensor.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char byte : bytes) {
        hash ^= byte;
        hash *= 0x100000001b3ULL;
      }
    }
  }
  return hash;
}

ClassHead random_head(int class_id, std::size_t dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  ClassHead h;
  h.class_id = class_id;
  h.weight = uniform_tensor({dim}, bound, rng);
  h.bias = Tensor::zeros({1});
  return h;
}

ModelState make_initial_model(std::span<const std::size_t> channels,
                              std::span<const int> classes, Rng& rng) {
  ModelState m;
  m.step = 1;
  m.backbone = Backbone::make(channels, rng);
  const std::size_t d = m.backbone.feature_dim();
  for (int c : classes) m.bank.add(random_head(c, d, rng));
  ClassHead aux = random_head(0, d, rng);
  m.aux.weight = aux.weight;
  m.aux.bias = aux.bias;
  for (const NamedTensor& p : m.parameters()) {
    Tensor t = p.tensor;
    t.set_requires_grad(true);
  }
  return m;
}

Tensor forward_features(Tape& tape, const Backbone& backbone,
                        const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != backbone.input_channels()) {
    throw ShapeError(fmt::format(
        "forward_features: image {} does not match {} input channels",
        shape_string(image.shape()), backbone.input_channels()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor x = image;
  for (std::size_t i = 0; i < backbone.layers.size(); ++i) {
    const ConvLayer& layer = backbone.layers[i];
    x = tape.conv2d(x, layer.kernel, layer.bias);
    if (i + 1 < backbone.layers.size()) x = tape.relu(x);
  }
  return tape.reshape(x, {h * w, backbone.feature_dim()});
}

namespace {

struct StackedHeads {
  Tensor weights;  // {d, C}
  Tensor bias;     // {C}
};

StackedHeads stack_heads(Tape& tape, const Tensor& features,
                         const ClassifierBank& bank,
                         std::span<const int> classes, std::string_view op) {
  if (classes.empty()) {
    throw ShapeError(fmt::format("{}: no classes requested", op));
  }
  std::vector<Tensor> weights, biases;
  for (int c : classes) {
    const ClassHead& h = bank.head(c);
    weights.push_back(h.weight);
    biases.push_back(h.bias);
  }
  if (features.rank() != 2 || features.dim(1) != weights.front().size()) {
    throw ShapeError(fmt::format("{}: features {} vs head dimension {}", op,
                                 shape_string(features.shape()),
                                 weights.front().size()));
  }
  StackedHeads s;
  s.weights = tape.stack_columns(weights);
  s.bias = tape.reshape(tape.stack_columns(biases), {classes.size()});
  return s;
}

}  // namespace

Tensor logits(Tape& tape, const Tensor& features, const ClassifierBank& bank,
              std::span<const int> classes) {
  StackedHeads s = stack_heads(tape, features, bank, classes, "logits");
  return tape.add_row_bias(tape.matmul(features, s.weights), s.bias);
}

Tensor logits(Tape& tape, const Tensor& features, const ClassifierBank& bank) {
  if (bank.empty()) throw ShapeError("logits: empty classifier bank");
  const std::vector<int> ids = bank.class_ids();
  return logits(tape, features, bank, ids);
}

DecomposedLogits decompose(Tape& tape, const Tensor& features,
                           const ClassifierBank& bank,
                           std::span<const int> classes) {
  StackedHeads s = stack_heads(tape, features, bank, classes, "decompose");
  DecomposedLogits out;
  out.z_plus = tape.signed_matmul(features, s.weights, Sign::kPositive);
  out.z_minus = tape.signed_matmul(features, s.weights, Sign::kNegative);
  out.bias = s.bias;
  out.z = tape.add_row_bias(tape.add(out.z_plus, out.z_minus), s.bias);
  return out;
}

Tensor aux_logit(Tape& tape, const Tensor& features, const AuxClassifier& aux) {
  if (features.rank() != 2 || features.dim(1) != aux.weight.size()) {
    throw ShapeError(fmt::format("aux_logit: features {} vs head dimension {}",
                                 shape_string(features.shape()),
                                 aux.weight.size()));
  }
  const Tensor detached = features.detach();
  const Tensor w = tape.reshape(aux.weight, {aux.weight.size(), 1});
  return tape.add_row_bias(tape.matmul(detached, w), aux.bias);
}

}  // namespace ciss
