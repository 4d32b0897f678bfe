#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "icmil/nn.hpp"
#include "icmil/types.hpp"

namespace icmil {

// Stochastic label-preserving augmentation applied on the student branch.
struct AugmentSpec {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  bool rotate90 = false;
  double brightness = 0.0;   // uniform shift amplitude
  double noise_sigma = 0.0;  // additive gaussian pixel noise

  bool enabled() const {
    return flip_horizontal || flip_vertical || rotate90 || brightness > 0.0 ||
           noise_sigma > 0.0;
  }

  static AugmentSpec desk_default() {
    AugmentSpec s;
    s.flip_horizontal = true;
    s.flip_vertical = true;
    s.rotate90 = true;
    s.brightness = 0.1;
    s.noise_sigma = 0.02;
    return s;
  }
};

Instance flip_horizontal(const Instance& patch);
Instance flip_vertical(const Instance& patch);
Instance rotate90(const Instance& patch);  // requires square patches
Instance augment(const AugmentSpec& spec, const Instance& patch,
                 std::mt19937_64& rng);

struct EmbedderConfig {
  enum class Mode { kConv, kVector };
  Mode mode = Mode::kConv;
  std::array<int, 3> patch_shape{3, 16, 16};  // conv mode
  std::vector<int> conv_channels{8, 16};      // hidden conv widths
  int input_dim = 16;                          // vector mode
  int d_feat = 32;    // stem output width (last conv's channels in conv mode)
  int d_hidden = 16;  // shared hidden space dimension
  bool identity_projection = false;  // vector mode, needs input_dim == d_hidden

  static EmbedderConfig desk_image(std::array<int, 3> patch_shape);
  static EmbedderConfig vector_mode(int dim, int d_hidden,
                                    bool identity = false);
  std::string describe() const;
  static EmbedderConfig parse(const std::string& descriptor);
};

// Per-instance forward activations kept for the backward pass.
struct EmbedCache {
  std::vector<Vec> conv_inputs;  // input to each conv
  std::vector<Vec> conv_acts;    // tanh output of each conv
  std::vector<std::array<int, 2>> extents;  // h,w entering each conv
  Vec feat;                      // stem output fed to the projection
};

// The instance embedder g(x): conv stem (tanh, global average pool) plus a
// linear projection into the hidden space. Vector mode bypasses the stem.
class Embedder {
 public:
  Embedder() = default;
  explicit Embedder(const EmbedderConfig& cfg);

  void init(std::mt19937_64& rng);

  const EmbedderConfig& config() const { return cfg_; }
  int d_hidden() const { return cfg_.d_hidden; }

  Vec embed(const Instance& patch) const;
  Vec embed(const Instance& patch, EmbedCache& cache) const;
  // Accumulates gradients from a loss gradient wrt the hidden vector.
  void backward(const EmbedCache& cache, const Vec& grad_hidden);

  Mat embed_bag(const Bag& bag) const;

  std::vector<ParamView> params();
  std::vector<ParamView> grads();
  void zero_grad();
  std::uint64_t fingerprint() const;

  Checkpoint to_checkpoint() const;
  static Embedder from_checkpoint(const Checkpoint& ck);

 private:
  EmbedderConfig cfg_;
  std::vector<Conv2d> convs_;
  Linear projection_;
};

inline Embedder clone_embedder(const Embedder& e) { return e; }

}  // namespace icmil
