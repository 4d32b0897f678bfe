#include "icmil/aggregator.hpp"

#include <cmath>
#include <stdexcept>

namespace icmil {

GatedAttentionParams::GatedAttentionParams(int d_hidden, int d_attn) {
  v1 = Mat::Zero(d_attn, d_hidden);
  v2 = Mat::Zero(d_attn, d_hidden);
  omega = Vec::Zero(d_attn);
  gv1 = Mat::Zero(d_attn, d_hidden);
  gv2 = Mat::Zero(d_attn, d_hidden);
  gomega = Vec::Zero(d_attn);
}

void GatedAttentionParams::init(std::mt19937_64& rng) {
  const double scale = std::sqrt(2.0 / (v1.rows() + v1.cols()));
  std::normal_distribution<double> dist(0.0, scale);
  for (Eigen::Index i = 0; i < v1.size(); ++i) v1.data()[i] = dist(rng);
  for (Eigen::Index i = 0; i < v2.size(); ++i) v2.data()[i] = dist(rng);
  std::normal_distribution<double> wdist(0.0, std::sqrt(1.0 / omega.size()));
  for (Eigen::Index i = 0; i < omega.size(); ++i) omega[i] = wdist(rng);
}

std::vector<ParamView> GatedAttentionParams::params() {
  return {{"v1", v1.data(), v1.size()},
          {"v2", v2.data(), v2.size()},
          {"omega", omega.data(), omega.size()}};
}

std::vector<ParamView> GatedAttentionParams::grads() {
  return {{"v1", gv1.data(), gv1.size()},
          {"v2", gv2.data(), gv2.size()},
          {"omega", gomega.data(), gomega.size()}};
}

void GatedAttentionParams::zero_grad() {
  gv1.setZero();
  gv2.setZero();
  gomega.setZero();
}

Checkpoint GatedAttentionParams::to_checkpoint() const {
  Checkpoint ck;
  ck.architecture = "gated-attention d_hidden=" + std::to_string(d_hidden()) +
                    " d_attn=" + std::to_string(d_attn());
  auto views = const_cast<GatedAttentionParams*>(this)->params();
  for (const auto& v : views) ck.add(v.name, v.data, v.size);
  return ck;
}

GatedAttentionParams GatedAttentionParams::from_checkpoint(
    const Checkpoint& ck) {
  int d_hidden = 0, d_attn = 0;
  if (std::sscanf(ck.architecture.c_str(),
                  "gated-attention d_hidden=%d d_attn=%d", &d_hidden,
                  &d_attn) != 2) {
    throw std::runtime_error("bad attention checkpoint arch: " +
                             ck.architecture);
  }
  GatedAttentionParams p(d_hidden, d_attn);
  for (auto& v : p.params()) {
    const auto& t = ck.get(v.name);
    if (static_cast<Eigen::Index>(t.size()) != v.size) {
      throw std::runtime_error("checkpoint tensor size mismatch: " + v.name);
    }
    std::copy(t.begin(), t.end(), v.data);
  }
  return p;
}

namespace {

void check_dims(const GatedAttentionParams& params, const Mat& embeddings) {
  if (embeddings.rows() < 1) throw std::invalid_argument("empty bag");
  if (embeddings.cols() != params.v1.cols()) {
    throw std::invalid_argument("embedding dimension mismatch");
  }
}

}  // namespace

Vec attention_scores(const GatedAttentionParams& params,
                     const Mat& embeddings) {
  AttentionCache cache;
  aggregate_attention(params, embeddings, cache);
  return cache.weights;
}

AttentionResult aggregate_attention(const GatedAttentionParams& params,
                                    const Mat& embeddings) {
  AttentionCache cache;
  return aggregate_attention(params, embeddings, cache);
}

AttentionResult aggregate_attention(const GatedAttentionParams& params,
                                    const Mat& embeddings,
                                    AttentionCache& cache) {
  check_dims(params, embeddings);
  const Eigen::Index k = embeddings.rows();
  cache.u = (params.v1 * embeddings.transpose()).array().tanh();
  cache.s = (1.0 + (-(params.v2 * embeddings.transpose()).array()).exp())
                .inverse();
  Vec logits(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    logits[i] =
        params.omega.dot((cache.u.col(i).array() * cache.s.col(i).array())
                             .matrix());
  }
  cache.weights = softmax(logits);

  AttentionResult result;
  result.weights = cache.weights;
  result.bag_embedding = embeddings.transpose() * cache.weights;
  return result;
}

Mat attention_backward(GatedAttentionParams& params, const Mat& embeddings,
                       const AttentionCache& cache, const Vec& grad_bag) {
  const Eigen::Index k = embeddings.rows();
  const Vec& a = cache.weights;

  Vec grad_a = embeddings * grad_bag;          // d(H)/d(a_k) = h_k . grad
  const double inner = a.dot(grad_a);          // softmax jacobian
  Vec grad_z = (a.array() * (grad_a.array() - inner)).matrix();

  Mat grad_emb = a * grad_bag.transpose();     // a_k * grad_H term
  for (Eigen::Index i = 0; i < k; ++i) {
    const Vec u = cache.u.col(i);
    const Vec s = cache.s.col(i);
    const Vec m = (u.array() * s.array()).matrix();
    params.gomega += grad_z[i] * m;
    const Vec t1 = (grad_z[i] * params.omega.array() * s.array() *
                    (1.0 - u.array().square()))
                       .matrix();
    const Vec t2 = (grad_z[i] * params.omega.array() * u.array() * s.array() *
                    (1.0 - s.array()))
                       .matrix();
    params.gv1 += t1 * embeddings.row(i);
    params.gv2 += t2 * embeddings.row(i);
    grad_emb.row(i) +=
        (params.v1.transpose() * t1 + params.v2.transpose() * t2).transpose();
  }
  return grad_emb;
}

Vec aggregate_pool(PoolKind kind, const Mat& embeddings) {
  if (embeddings.rows() < 1) throw std::invalid_argument("empty bag");
  if (kind == PoolKind::kMean) {
    return embeddings.colwise().mean();
  }
  return embeddings.colwise().maxCoeff();
}

AggregatorKind aggregator_kind_from_string(const std::string& name) {
  if (name == "attention") return AggregatorKind::kAttention;
  if (name == "mean") return AggregatorKind::kMean;
  if (name == "max") return AggregatorKind::kMax;
  throw std::invalid_argument("unknown aggregator '" + name +
                              "' (valid: attention, mean, max)");
}

std::string to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::kAttention: return "attention";
    case AggregatorKind::kMean: return "mean";
    case AggregatorKind::kMax: return "max";
  }
  return "attention";
}

}  // namespace icmil
