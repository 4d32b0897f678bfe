#include "icmil/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace icmil {

namespace {

void check_patch(const Instance& patch) {
  if (patch.size() <= 0 ||
      static_cast<size_t>(patch.size()) != patch.pixels.size()) {
    throw std::invalid_argument("instance pixel buffer does not match shape");
  }
}

Instance remap(const Instance& src, auto&& index_of_src) {
  Instance out = src;
  const int c = src.shape[0], h = src.shape[1], w = src.shape[2];
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.pixels[static_cast<size_t>((ch * h + y) * w + x)] =
            src.pixels[static_cast<size_t>(index_of_src(ch, y, x))];
      }
    }
  }
  return out;
}

}  // namespace

Instance flip_horizontal(const Instance& patch) {
  check_patch(patch);
  const int h = patch.shape[1], w = patch.shape[2];
  return remap(patch, [&](int c, int y, int x) { return (c * h + y) * w + (w - 1 - x); });
}

Instance flip_vertical(const Instance& patch) {
  check_patch(patch);
  const int h = patch.shape[1], w = patch.shape[2];
  return remap(patch, [&](int c, int y, int x) { return (c * h + (h - 1 - y)) * w + x; });
}

Instance rotate90(const Instance& patch) {
  check_patch(patch);
  const int h = patch.shape[1], w = patch.shape[2];
  if (h != w) throw std::invalid_argument("rotate90 needs square patches");
  // (y, x) <- (w-1-x, y)
  return remap(patch, [&](int c, int y, int x) { return (c * h + (w - 1 - x)) * w + y; });
}

Instance augment(const AugmentSpec& spec, const Instance& patch,
                 std::mt19937_64& rng) {
  check_patch(patch);
  Instance out = patch;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (spec.flip_horizontal && unit(rng) < 0.5) out = flip_horizontal(out);
  if (spec.flip_vertical && unit(rng) < 0.5) out = flip_vertical(out);
  if (spec.rotate90 && out.shape[1] == out.shape[2]) {
    std::uniform_int_distribution<int> quarter(0, 3);
    const int turns = quarter(rng);
    for (int i = 0; i < turns; ++i) out = rotate90(out);
  }
  if (spec.brightness > 0.0) {
    std::uniform_real_distribution<double> shift(-spec.brightness,
                                                 spec.brightness);
    const double d = shift(rng);
    for (double& v : out.pixels) v += d;
  }
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (double& v : out.pixels) v += noise(rng);
  }
  if (out.unit_range) {
    for (double& v : out.pixels) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

EmbedderConfig EmbedderConfig::desk_image(std::array<int, 3> patch_shape) {
  EmbedderConfig cfg;
  cfg.mode = Mode::kConv;
  cfg.patch_shape = patch_shape;
  cfg.conv_channels = {8, 16};
  cfg.d_feat = 128;
  cfg.d_hidden = 64;
  return cfg;
}

EmbedderConfig EmbedderConfig::vector_mode(int dim, int d_hidden,
                                           bool identity) {
  EmbedderConfig cfg;
  cfg.mode = Mode::kVector;
  cfg.input_dim = dim;
  cfg.patch_shape = {dim, 1, 1};
  cfg.d_feat = dim;
  cfg.d_hidden = d_hidden;
  cfg.identity_projection = identity;
  if (identity && dim != d_hidden) {
    throw std::invalid_argument("identity projection needs dim == d_hidden");
  }
  return cfg;
}

std::string EmbedderConfig::describe() const {
  std::ostringstream os;
  if (mode == Mode::kVector) {
    os << "vector dim=" << input_dim << " d_hidden=" << d_hidden
       << " identity=" << (identity_projection ? 1 : 0);
  } else {
    os << "conv patch=" << patch_shape[0] << "x" << patch_shape[1] << "x"
       << patch_shape[2] << " channels=";
    for (size_t i = 0; i < conv_channels.size(); ++i) {
      os << (i ? "," : "") << conv_channels[i];
    }
    os << " d_feat=" << d_feat << " d_hidden=" << d_hidden;
  }
  return os.str();
}

EmbedderConfig EmbedderConfig::parse(const std::string& descriptor) {
  std::istringstream is(descriptor);
  std::string kind;
  is >> kind;
  EmbedderConfig cfg;
  auto next_value = [&](const std::string& key) {
    std::string tok;
    if (!(is >> tok) || tok.rfind(key + "=", 0) != 0) {
      throw std::runtime_error("bad embedder descriptor: " + descriptor);
    }
    return tok.substr(key.size() + 1);
  };
  if (kind == "vector") {
    cfg.mode = Mode::kVector;
    cfg.input_dim = std::stoi(next_value("dim"));
    cfg.d_hidden = std::stoi(next_value("d_hidden"));
    cfg.identity_projection = next_value("identity") == "1";
    cfg.patch_shape = {cfg.input_dim, 1, 1};
    cfg.d_feat = cfg.input_dim;
  } else if (kind == "conv") {
    cfg.mode = Mode::kConv;
    std::string p = next_value("patch");
    std::replace(p.begin(), p.end(), 'x', ' ');
    std::istringstream ps(p);
    ps >> cfg.patch_shape[0] >> cfg.patch_shape[1] >> cfg.patch_shape[2];
    std::string ch = next_value("channels");
    std::replace(ch.begin(), ch.end(), ',', ' ');
    std::istringstream cs(ch);
    cfg.conv_channels.clear();
    for (int v; cs >> v;) cfg.conv_channels.push_back(v);
    cfg.d_feat = std::stoi(next_value("d_feat"));
    cfg.d_hidden = std::stoi(next_value("d_hidden"));
  } else {
    throw std::runtime_error("unknown embedder kind: " + kind);
  }
  return cfg;
}

Embedder::Embedder(const EmbedderConfig& cfg) : cfg_(cfg) {
  if (cfg_.mode == EmbedderConfig::Mode::kConv) {
    int in = cfg_.patch_shape[0];
    for (int ch : cfg_.conv_channels) {
      convs_.emplace_back(in, ch);
      in = ch;
    }
    convs_.emplace_back(in, cfg_.d_feat);
    projection_.resize(cfg_.d_feat, cfg_.d_hidden);
  } else {
    projection_.resize(cfg_.input_dim, cfg_.d_hidden);
    if (cfg_.identity_projection) {
      projection_.w = Mat::Identity(cfg_.d_hidden, cfg_.input_dim);
    }
  }
}

void Embedder::init(std::mt19937_64& rng) {
  for (auto& c : convs_) c.init_xavier(rng);
  if (cfg_.mode == EmbedderConfig::Mode::kVector && cfg_.identity_projection) {
    projection_.w = Mat::Identity(cfg_.d_hidden, cfg_.input_dim);
    projection_.b.setZero();
  } else {
    projection_.init_xavier(rng);
  }
}

Vec Embedder::embed(const Instance& patch) const {
  EmbedCache cache;
  return embed(patch, cache);
}

Vec Embedder::embed(const Instance& patch, EmbedCache& cache) const {
  check_patch(patch);
  if (patch.shape != cfg_.patch_shape) {
    throw std::invalid_argument("instance shape does not match embedder");
  }
  cache = EmbedCache{};
  if (cfg_.mode == EmbedderConfig::Mode::kVector) {
    cache.feat = Eigen::Map<const Vec>(patch.pixels.data(),
                                       static_cast<Eigen::Index>(patch.pixels.size()));
    return projection_.forward(cache.feat);
  }
  Vec x = Eigen::Map<const Vec>(patch.pixels.data(),
                                static_cast<Eigen::Index>(patch.pixels.size()));
  int h = cfg_.patch_shape[1], w = cfg_.patch_shape[2];
  for (const auto& conv : convs_) {
    cache.conv_inputs.push_back(x);
    cache.extents.push_back({h, w});
    Vec y = conv.forward(x, h, w);
    y = y.array().tanh();
    cache.conv_acts.push_back(y);
    x = std::move(y);
    h = Conv2d::out_extent(h);
    w = Conv2d::out_extent(w);
  }
  // Global average pool per channel.
  const int spatial = h * w;
  Vec feat = Vec::Zero(cfg_.d_feat);
  for (int c = 0; c < cfg_.d_feat; ++c) {
    feat[c] = x.segment(static_cast<Eigen::Index>(c) * spatial, spatial).mean();
  }
  cache.feat = feat;
  return projection_.forward(feat);
}

void Embedder::backward(const EmbedCache& cache, const Vec& grad_hidden) {
  Vec grad_feat = projection_.backward(cache.feat, grad_hidden);
  if (cfg_.mode == EmbedderConfig::Mode::kVector) return;

  // Undo the global average pool.
  int h = cfg_.patch_shape[1], w = cfg_.patch_shape[2];
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = Conv2d::out_extent(h);
    w = Conv2d::out_extent(w);
  }
  const int spatial = h * w;
  Vec grad = Vec::Zero(static_cast<Eigen::Index>(cfg_.d_feat) * spatial);
  for (int c = 0; c < cfg_.d_feat; ++c) {
    grad.segment(static_cast<Eigen::Index>(c) * spatial, spatial)
        .setConstant(grad_feat[c] / spatial);
  }
  for (size_t i = convs_.size(); i-- > 0;) {
    const Vec& act = cache.conv_acts[i];
    Vec grad_pre = (grad.array() * (1.0 - act.array().square())).matrix();
    grad = convs_[i].backward(cache.conv_inputs[i], cache.extents[i][0],
                              cache.extents[i][1], grad_pre);
  }
}

Mat Embedder::embed_bag(const Bag& bag) const {
  if (bag.instances.empty()) throw std::invalid_argument("empty bag");
  Mat out(static_cast<Eigen::Index>(bag.instances.size()), cfg_.d_hidden);
  for (size_t k = 0; k < bag.instances.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = embed(bag.instances[k]).transpose();
  }
  return out;
}

std::vector<ParamView> Embedder::params() {
  std::vector<ParamView> views;
  for (size_t i = 0; i < convs_.size(); ++i) {
    views.push_back({"conv" + std::to_string(i) + ".w", convs_[i].w.data(),
                     convs_[i].w.size()});
    views.push_back({"conv" + std::to_string(i) + ".b", convs_[i].b.data(),
                     convs_[i].b.size()});
  }
  views.push_back({"proj.w", projection_.w.data(), projection_.w.size()});
  views.push_back({"proj.b", projection_.b.data(), projection_.b.size()});
  return views;
}

std::vector<ParamView> Embedder::grads() {
  std::vector<ParamView> views;
  for (size_t i = 0; i < convs_.size(); ++i) {
    views.push_back({"conv" + std::to_string(i) + ".w", convs_[i].gw.data(),
                     convs_[i].gw.size()});
    views.push_back({"conv" + std::to_string(i) + ".b", convs_[i].gb.data(),
                     convs_[i].gb.size()});
  }
  views.push_back({"proj.w", projection_.gw.data(), projection_.gw.size()});
  views.push_back({"proj.b", projection_.gb.data(), projection_.gb.size()});
  return views;
}

void Embedder::zero_grad() {
  for (auto& c : convs_) c.zero_grad();
  projection_.zero_grad();
}

std::uint64_t Embedder::fingerprint() const {
  auto views = const_cast<Embedder*>(this)->params();
  return fingerprint_params(views);
}

Checkpoint Embedder::to_checkpoint() const {
  Checkpoint ck;
  ck.architecture = cfg_.describe();
  auto views = const_cast<Embedder*>(this)->params();
  for (const auto& v : views) ck.add(v.name, v.data, v.size);
  return ck;
}

Embedder Embedder::from_checkpoint(const Checkpoint& ck) {
  Embedder e(EmbedderConfig::parse(ck.architecture));
  for (auto& v : e.params()) {
    const auto& t = ck.get(v.name);
    if (static_cast<Eigen::Index>(t.size()) != v.size) {
      throw std::runtime_error("checkpoint tensor size mismatch: " + v.name);
    }
    std::copy(t.begin(), t.end(), v.data);
  }
  return e;
}

}  // namespace icmil
