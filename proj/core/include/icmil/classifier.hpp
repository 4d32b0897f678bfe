#pragma once

#include <random>
#include <vector>

#include "icmil/nn.hpp"

namespace icmil {

// Multi-layer classification head over the hidden space. Hidden layers use
// tanh, the final layer a softmax; per-layer post-activation outputs are
// exposed because the weight-similarity loss compares them layer by layer.
struct ClassifierParams {
  std::vector<Linear> layers;

  ClassifierParams() = default;
  // widths: input dim, hidden widths..., C.
  explicit ClassifierParams(const std::vector<int>& widths);

  int num_layers() const { return static_cast<int>(layers.size()); }
  int input_dim() const { return static_cast<int>(layers.front().w.cols()); }
  int num_classes() const { return static_cast<int>(layers.back().w.rows()); }
  std::vector<int> widths() const;

  void init(std::mt19937_64& rng);
  std::vector<ParamView> params();
  std::vector<ParamView> grads();
  void zero_grad();

  Checkpoint to_checkpoint() const;
  static ClassifierParams from_checkpoint(const Checkpoint& ck);
};

struct ClassifierOutput {
  Vec probs;                      // softmax of the final layer
  std::vector<Vec> layer_outputs; // post-activation per layer, last == probs
};

struct ClassifyCache {
  std::vector<Vec> inputs;   // input to each linear layer
  std::vector<Vec> outputs;  // post-activation output of each layer
};

ClassifierOutput classify(const ClassifierParams& params, const Vec& embedding);
ClassifierOutput classify(const ClassifierParams& params, const Vec& embedding,
                          ClassifyCache& cache);

// grad_logits: loss gradient wrt the final pre-softmax logits.
// hidden_output_grads (optional, size L-1): extra loss gradients injected at
// each hidden layer's post-activation output. Returns grad wrt the embedding.
Vec classifier_backward(ClassifierParams& params, const ClassifyCache& cache,
                        const Vec& grad_logits,
                        const std::vector<Vec>* hidden_output_grads = nullptr);

// f'(x) starts as an exact copy of f(x).
inline ClassifierParams init_instance_classifier(
    const ClassifierParams& bag_classifier) {
  return bag_classifier;
}

double cross_entropy(const Vec& probs, int label);

}  // namespace icmil
