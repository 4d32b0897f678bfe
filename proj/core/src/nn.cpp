#include "icmil/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace icmil {

Vec Conv2d::forward(const Vec& x, int h, int wd) const {
  const int oh = out_extent(h), ow = out_extent(wd);
  Vec out = Vec::Zero(static_cast<Eigen::Index>(out_ch) * oh * ow);
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b[oc];
        for (int ic = 0; ic < in_ch; ++ic) {
          for (int ky = 0; ky < kKernel; ++ky) {
            const int iy = oy * kStride + ky - kPad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kKernel; ++kx) {
              const int ix = ox * kStride + kx - kPad;
              if (ix < 0 || ix >= wd) continue;
              acc += w[((oc * in_ch + ic) * kKernel + ky) * kKernel + kx] *
                     x[(ic * h + iy) * wd + ix];
            }
          }
        }
        out[(oc * oh + oy) * ow + ox] = acc;
      }
    }
  }
  return out;
}

Vec Conv2d::backward(const Vec& x, int h, int wd, const Vec& grad_out) {
  const int oh = out_extent(h), ow = out_extent(wd);
  Vec gx = Vec::Zero(x.size());
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double go = grad_out[(oc * oh + oy) * ow + ox];
        if (go == 0.0) continue;
        gb[oc] += go;
        for (int ic = 0; ic < in_ch; ++ic) {
          for (int ky = 0; ky < kKernel; ++ky) {
            const int iy = oy * kStride + ky - kPad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kKernel; ++kx) {
              const int ix = ox * kStride + kx - kPad;
              if (ix < 0 || ix >= wd) continue;
              const Eigen::Index wi =
                  ((oc * in_ch + ic) * kKernel + ky) * kKernel + kx;
              const Eigen::Index xi = (ic * h + iy) * wd + ix;
              gw[wi] += go * x[xi];
              gx[xi] += go * w[wi];
            }
          }
        }
      }
    }
  }
  return gx;
}

void AdamOptimizer::step(const std::vector<ParamView>& params,
                         const std::vector<ParamView>& grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("param/grad view mismatch");
  }
  if (m.empty()) {
    for (const auto& p : params) {
      m.push_back(Vec::Zero(p.size));
      v.push_back(Vec::Zero(p.size));
    }
  }
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Eigen::Map<Vec> p(params[i].data, params[i].size);
    Eigen::Map<const Vec> g(grads[i].data, grads[i].size);
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i].array().matrix() +
           (1.0 - beta2) * g.array().square().matrix();
    p.array() -= lr * (m[i].array() / bc1) /
                 ((v[i].array() / bc2).sqrt() + eps);
  }
}

std::uint64_t fingerprint_params(const std::vector<ParamView>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    h = fingerprint_bytes(p.data, sizeof(double) * static_cast<size_t>(p.size),
                          h);
  }
  return h;
}

const std::vector<double>& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw std::runtime_error("checkpoint tensor not found: " + name);
}

void Checkpoint::save(std::ostream& os) const {
  os << "icmil-checkpoint v1\n";
  os << "arch " << architecture << "\n";
  char buf[64];
  for (const auto& [name, t] : tensors) {
    os << "tensor " << name << " " << t.size() << "\n";
    for (size_t i = 0; i < t.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%a", t[i]);
      os << buf << (i + 1 == t.size() ? "" : " ");
    }
    os << "\n";
  }
}

void Checkpoint::save_file(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  save(os);
}

Checkpoint Checkpoint::load(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "icmil-checkpoint v1") {
    throw std::runtime_error("bad checkpoint header");
  }
  Checkpoint ck;
  if (!std::getline(is, line) || line.rfind("arch ", 0) != 0) {
    throw std::runtime_error("missing checkpoint arch line");
  }
  ck.architecture = line.substr(5);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream hdr(line);
    std::string tag, name;
    size_t n = 0;
    hdr >> tag >> name >> n;
    if (tag != "tensor") throw std::runtime_error("bad checkpoint line: " + line);
    if (!std::getline(is, line)) {
      throw std::runtime_error("truncated checkpoint tensor: " + name);
    }
    std::vector<double> vals;
    vals.reserve(n);
    const char* p = line.c_str();
    char* end = nullptr;
    for (size_t i = 0; i < n; ++i) {
      const double v = std::strtod(p, &end);
      if (end == p) throw std::runtime_error("bad checkpoint value in " + name);
      vals.push_back(v);
      p = end;
    }
    ck.tensors.emplace_back(name, std::move(vals));
  }
  return ck;
}

Checkpoint Checkpoint::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read checkpoint: " + path);
  return load(is);
}

Vec softmax(const Vec& logits) {
  const double mx = logits.maxCoeff();
  Vec e = (logits.array() - mx).exp();
  return e / e.sum();
}

}  // namespace icmil
