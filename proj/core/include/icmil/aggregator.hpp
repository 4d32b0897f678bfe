#pragma once

#include <random>
#include <string>
#include <vector>

#include "icmil/nn.hpp"

namespace icmil {

// Learnable parameters of the gated attention aggregator.
struct GatedAttentionParams {
  Mat v1;     // d_attn x d_hidden
  Mat v2;     // d_attn x d_hidden
  Vec omega;  // d_attn
  Mat gv1;
  Mat gv2;
  Vec gomega;

  GatedAttentionParams() = default;
  GatedAttentionParams(int d_hidden, int d_attn);

  int d_hidden() const { return static_cast<int>(v1.cols()); }
  int d_attn() const { return static_cast<int>(v1.rows()); }

  void init(std::mt19937_64& rng);
  std::vector<ParamView> params();
  std::vector<ParamView> grads();
  void zero_grad();

  Checkpoint to_checkpoint() const;
  static GatedAttentionParams from_checkpoint(const Checkpoint& ck);
};

struct AttentionResult {
  Vec weights;        // a_k, sums to 1
  Vec bag_embedding;  // H = sum_k a_k h_k
};

// Intermediate activations for the backward pass.
struct AttentionCache {
  Mat u;  // tanh(V1 h_k), column k
  Mat s;  // sigm(V2 h_k), column k
  Vec weights;
};

// Softmax over k of omega^T (tanh(V1 h_k) .* sigm(V2 h_k)).
Vec attention_scores(const GatedAttentionParams& params, const Mat& embeddings);

AttentionResult aggregate_attention(const GatedAttentionParams& params,
                                    const Mat& embeddings);
AttentionResult aggregate_attention(const GatedAttentionParams& params,
                                    const Mat& embeddings,
                                    AttentionCache& cache);

// Accumulates parameter gradients for a loss gradient wrt the bag embedding;
// returns the gradient wrt the instance embeddings (K x d_hidden).
Mat attention_backward(GatedAttentionParams& params, const Mat& embeddings,
                       const AttentionCache& cache, const Vec& grad_bag);

enum class PoolKind { kMean, kMax };

Vec aggregate_pool(PoolKind kind, const Mat& embeddings);

enum class AggregatorKind { kAttention, kMean, kMax };

AggregatorKind aggregator_kind_from_string(const std::string& name);
std::string to_string(AggregatorKind kind);

}  // namespace icmil
