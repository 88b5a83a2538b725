#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ciss/random.hpp"
#include "ciss/tape.hpp"
#include "ciss/tensor.hpp"

namespace ciss {

struct ConvLayer {
  Tensor kernel;  // {out, 3, 3, in}
  Tensor bias;    // {out}
};

// Stack of 3x3 same-padding convolutions with relu between layers (none
// after the last). Produces dense per-pixel features.
struct Backbone {
  std::vector<ConvLayer> layers;

  // channels = {3, 16, 16} builds two layers 3->16->16. Kernels use
  // fan-in scaled uniform init (bound sqrt(6 / fan_in)); biases start at 0.
  static Backbone make(std::span<const std::size_t> channels, Rng& rng);

  std::size_t input_channels() const;
  std::size_t feature_dim() const;
};

struct ClassHead {
  int class_id = 0;
  Tensor weight;  // {d}
  Tensor bias;    // {1}
};

// One head per learned class, kept sorted by class id.
class ClassifierBank {
 public:
  // Throws ConfigError when the class already has a head.
  void add(ClassHead head);
  bool contains(int class_id) const;
  const ClassHead& head(int class_id) const;
  ClassHead& head(int class_id);
  const std::vector<ClassHead>& heads() const { return heads_; }
  std::vector<ClassHead>& heads() { return heads_; }
  std::vector<int> class_ids() const;
  std::size_t size() const { return heads_.size(); }
  bool empty() const { return heads_.empty(); }

 private:
  std::vector<ClassHead> heads_;
};

struct AuxClassifier {
  Tensor weight;  // {d}
  Tensor bias;    // {1}
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ModelState {
  Backbone backbone;
  ClassifierBank bank;
  AuxClassifier aux;
  int step = 0;

  // Deep copy; every tensor gets the requested requires_grad.
  ModelState clone(bool requires_grad) const;
  // Frozen copy for distillation targets: deep copy without grad.
  ModelState snapshot() const { return clone(false); }
  // Stable order: backbone layers, class heads by id, aux head.
  std::vector<NamedTensor> parameters() const;
  // FNV-1a over all parameter bytes in parameters() order.
  std::uint64_t fingerprint() const;
};

// Fresh model for step 1: random backbone, fan-in scaled random heads for
// `classes` and for the auxiliary classifier.
ModelState make_initial_model(std::span<const std::size_t> channels,
                              std::span<const int> classes, Rng& rng);

// Random head with weights uniform in +-1/sqrt(d) and zero bias.
ClassHead random_head(int class_id, std::size_t dim, Rng& rng);

// image {H, W, Cin} -> features {H*W, d}.
Tensor forward_features(Tape& tape, const Backbone& backbone,
                        const Tensor& image);

// z(i, c) = f(i)^T w(c) + b(c) for the listed classes, in list order.
// features {HW, d} -> {HW, classes.size()}.
Tensor logits(Tape& tape, const Tensor& features, const ClassifierBank& bank,
              std::span<const int> classes);
Tensor logits(Tape& tape, const Tensor& features, const ClassifierBank& bank);

struct DecomposedLogits {
  Tensor z;        // {HW, C}
  Tensor z_plus;   // {HW, C}, >= 0
  Tensor z_minus;  // {HW, C}, <= 0
  Tensor bias;     // {C}
};

// Splits each logit into the sums of positive and negative feature-weight
// products. The bias belongs to neither part: z = z_plus + z_minus + bias.
DecomposedLogits decompose(Tape& tape, const Tensor& features,
                           const ClassifierBank& bank,
                           std::span<const int> classes);

// Auxiliary logit {HW, 1}. Features are detached first, so nothing computed
// from this logit reaches the backbone.
Tensor aux_logit(Tape& tape, const Tensor& features, const AuxClassifier& aux);

}  // namespace ciss
