#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace icmil {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Mutable view over one parameter (or gradient) tensor's storage.
struct ParamView {
  std::string name;
  double* data = nullptr;
  Eigen::Index size = 0;
};

struct Linear {
  Mat w;  // out x in
  Vec b;
  Mat gw;
  Vec gb;

  Linear() = default;
  Linear(int in, int out) { resize(in, out); }

  void resize(int in, int out) {
    w = Mat::Zero(out, in);
    b = Vec::Zero(out);
    gw = Mat::Zero(out, in);
    gb = Vec::Zero(out);
  }

  void init_xavier(std::mt19937_64& rng) {
    const double scale = std::sqrt(2.0 / (w.rows() + w.cols()));
    std::normal_distribution<double> dist(0.0, scale);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    b.setZero();
  }

  Vec forward(const Vec& x) const { return w * x + b; }

  // Accumulates parameter gradients, returns gradient wrt the input.
  Vec backward(const Vec& x, const Vec& grad_out) {
    gw += grad_out * x.transpose();
    gb += grad_out;
    return w.transpose() * grad_out;
  }

  void zero_grad() {
    gw.setZero();
    gb.setZero();
  }
};

// 3x3 conv, stride 2, padding 1, on channels x h x w stored row-major per
// channel. Small and loop-based; patches at desk scale are tiny.
struct Conv2d {
  int in_ch = 0;
  int out_ch = 0;
  static constexpr int kKernel = 3;
  static constexpr int kStride = 2;
  static constexpr int kPad = 1;
  Vec w;  // out_ch * in_ch * 9
  Vec b;  // out_ch
  Vec gw;
  Vec gb;

  Conv2d() = default;
  Conv2d(int in, int out) : in_ch(in), out_ch(out) {
    w = Vec::Zero(static_cast<Eigen::Index>(out) * in * kKernel * kKernel);
    b = Vec::Zero(out);
    gw = Vec::Zero(w.size());
    gb = Vec::Zero(out);
  }

  void init_xavier(std::mt19937_64& rng) {
    const double fan = in_ch * kKernel * kKernel + out_ch * kKernel * kKernel;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    b.setZero();
  }

  static int out_extent(int in) { return (in + 2 * kPad - kKernel) / kStride + 1; }

  // x: in_ch*h*w flattened; returns out_ch*oh*ow flattened.
  Vec forward(const Vec& x, int h, int wd) const;
  // grad_out matches forward's output; accumulates gw/gb, returns grad wrt x.
  Vec backward(const Vec& x, int h, int wd, const Vec& grad_out);

  void zero_grad() {
    gw.setZero();
    gb.setZero();
  }
};

struct AdamOptimizer {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Vec> m;
  std::vector<Vec> v;

  explicit AdamOptimizer(double learning_rate = 1e-3) : lr(learning_rate) {}

  // params[i] and grads[i] must alias the same tensors call after call.
  void step(const std::vector<ParamView>& params,
            const std::vector<ParamView>& grads);
};

inline std::uint64_t fingerprint_bytes(const void* data, size_t n,
                                       std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fingerprint_params(const std::vector<ParamView>& params);

// Plain-text tensor archive; hexfloat values so round-trips are bit exact.
struct Checkpoint {
  std::string architecture;
  std::vector<std::pair<std::string, std::vector<double>>> tensors;

  void add(const std::string& name, const double* data, Eigen::Index n) {
    tensors.emplace_back(name, std::vector<double>(data, data + n));
  }
  const std::vector<double>& get(const std::string& name) const;

  void save(std::ostream& os) const;
  void save_file(const std::string& path) const;
  static Checkpoint load(std::istream& is);
  static Checkpoint load_file(const std::string& path);
};

// Numerically stable softmax (max subtraction).
Vec softmax(const Vec& logits);

}  // namespace icmil
