#include "icmil/classifier.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace icmil {

ClassifierParams::ClassifierParams(const std::vector<int>& widths) {
  if (widths.size() < 2) {
    throw std::invalid_argument("classifier needs at least input and output widths");
  }
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    layers.emplace_back(widths[i], widths[i + 1]);
  }
}

std::vector<int> ClassifierParams::widths() const {
  std::vector<int> w{input_dim()};
  for (const auto& l : layers) w.push_back(static_cast<int>(l.w.rows()));
  return w;
}

void ClassifierParams::init(std::mt19937_64& rng) {
  for (auto& l : layers) l.init_xavier(rng);
}

std::vector<ParamView> ClassifierParams::params() {
  std::vector<ParamView> views;
  for (size_t i = 0; i < layers.size(); ++i) {
    views.push_back({"layer" + std::to_string(i) + ".w", layers[i].w.data(),
                     layers[i].w.size()});
    views.push_back({"layer" + std::to_string(i) + ".b", layers[i].b.data(),
                     layers[i].b.size()});
  }
  return views;
}

std::vector<ParamView> ClassifierParams::grads() {
  std::vector<ParamView> views;
  for (size_t i = 0; i < layers.size(); ++i) {
    views.push_back({"layer" + std::to_string(i) + ".w", layers[i].gw.data(),
                     layers[i].gw.size()});
    views.push_back({"layer" + std::to_string(i) + ".b", layers[i].gb.data(),
                     layers[i].gb.size()});
  }
  return views;
}

void ClassifierParams::zero_grad() {
  for (auto& l : layers) l.zero_grad();
}

Checkpoint ClassifierParams::to_checkpoint() const {
  Checkpoint ck;
  std::ostringstream arch;
  arch << "classifier widths=";
  const auto w = widths();
  for (size_t i = 0; i < w.size(); ++i) arch << (i ? "," : "") << w[i];
  ck.architecture = arch.str();
  auto views = const_cast<ClassifierParams*>(this)->params();
  for (const auto& v : views) ck.add(v.name, v.data, v.size);
  return ck;
}

ClassifierParams ClassifierParams::from_checkpoint(const Checkpoint& ck) {
  if (ck.architecture.rfind("classifier widths=", 0) != 0) {
    throw std::runtime_error("bad classifier checkpoint arch: " +
                             ck.architecture);
  }
  std::string ws = ck.architecture.substr(std::string("classifier widths=").size());
  for (auto& c : ws) {
    if (c == ',') c = ' ';
  }
  std::istringstream is(ws);
  std::vector<int> widths;
  for (int v; is >> v;) widths.push_back(v);
  ClassifierParams p(widths);
  for (auto& v : p.params()) {
    const auto& t = ck.get(v.name);
    if (static_cast<Eigen::Index>(t.size()) != v.size) {
      throw std::runtime_error("checkpoint tensor size mismatch: " + v.name);
    }
    std::copy(t.begin(), t.end(), v.data);
  }
  return p;
}

ClassifierOutput classify(const ClassifierParams& params, const Vec& embedding) {
  ClassifyCache cache;
  return classify(params, embedding, cache);
}

ClassifierOutput classify(const ClassifierParams& params, const Vec& embedding,
                          ClassifyCache& cache) {
  if (embedding.size() != params.input_dim()) {
    throw std::invalid_argument("embedding width does not match classifier");
  }
  if (!embedding.allFinite()) {
    throw std::invalid_argument("non-finite embedding");
  }
  cache = ClassifyCache{};
  Vec x = embedding;
  const int l = params.num_layers();
  for (int i = 0; i < l; ++i) {
    cache.inputs.push_back(x);
    Vec z = params.layers[static_cast<size_t>(i)].forward(x);
    Vec y = i + 1 < l ? Vec(z.array().tanh()) : softmax(z);
    cache.outputs.push_back(y);
    x = std::move(y);
  }
  ClassifierOutput out;
  out.probs = cache.outputs.back();
  out.layer_outputs = cache.outputs;
  return out;
}

Vec classifier_backward(ClassifierParams& params, const ClassifyCache& cache,
                        const Vec& grad_logits,
                        const std::vector<Vec>* hidden_output_grads) {
  const int l = params.num_layers();
  if (hidden_output_grads &&
      static_cast<int>(hidden_output_grads->size()) != l - 1) {
    throw std::invalid_argument("hidden gradient count mismatch");
  }
  Vec grad = params.layers[static_cast<size_t>(l - 1)].backward(
      cache.inputs[static_cast<size_t>(l - 1)], grad_logits);
  for (int i = l - 2; i >= 0; --i) {
    if (hidden_output_grads) {
      grad += (*hidden_output_grads)[static_cast<size_t>(i)];
    }
    const Vec& y = cache.outputs[static_cast<size_t>(i)];
    Vec grad_pre = (grad.array() * (1.0 - y.array().square())).matrix();
    grad = params.layers[static_cast<size_t>(i)].backward(
        cache.inputs[static_cast<size_t>(i)], grad_pre);
  }
  return grad;
}

double cross_entropy(const Vec& probs, int label) {
  if (label < 0 || label >= probs.size()) {
    throw std::invalid_argument("label out of range");
  }
  return -std::log(std::max(probs[label], 1e-12));
}

}  // namespace icmil
