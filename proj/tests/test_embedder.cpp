#include <doctest.h>

#include <sstream>

#include "icmil/bagdata.hpp"
#include "icmil/embedder.hpp"
#include "icmil/rng.hpp"
#include "support/oracles.hpp"

using namespace icmil;

namespace {

Instance make_patch(std::array<int, 3> shape, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Instance inst;
  inst.shape = shape;
  inst.pixels.resize(static_cast<size_t>(shape[0] * shape[1] * shape[2]));
  for (double& v : inst.pixels) v = unit(rng);
  return inst;
}

EmbedderConfig small_conv_config() {
  EmbedderConfig cfg;
  cfg.mode = EmbedderConfig::Mode::kConv;
  cfg.patch_shape = {2, 8, 8};
  cfg.conv_channels = {4};
  cfg.d_feat = 6;
  cfg.d_hidden = 5;
  return cfg;
}

}  // namespace

TEST_CASE("embedding dimension and determinism") {
  auto rng = make_rng(1);
  Embedder e(small_conv_config());
  e.init(rng);
  const Instance patch = make_patch({2, 8, 8}, 2);
  const Vec a = e.embed(patch);
  const Vec b = e.embed(patch);
  CHECK(a.size() == 5);
  CHECK(a.allFinite());
  CHECK(a == b);

  CHECK_THROWS(e.embed(make_patch({2, 4, 4}, 3)));
}

TEST_CASE("vector mode with identity projection is the identity") {
  Embedder e(EmbedderConfig::vector_mode(4, 4, /*identity=*/true));
  Instance inst;
  inst.shape = {4, 1, 1};
  inst.unit_range = false;
  inst.pixels = {0.5, -1.25, 3.0, 0.0};
  const Vec out = e.embed(inst);
  for (int i = 0; i < 4; ++i) CHECK(out[i] == inst.pixels[static_cast<size_t>(i)]);
}

TEST_CASE("zero projection maps everything to zero") {
  Embedder e(small_conv_config());
  auto rng = make_rng(4);
  e.init(rng);
  for (auto& v : e.params()) {
    if (v.name.rfind("proj", 0) == 0) {
      Eigen::Map<Vec>(v.data, v.size).setZero();
    }
  }
  CHECK(e.embed(make_patch({2, 8, 8}, 5)).isZero());
}

TEST_CASE("embed_bag preserves row order") {
  auto rng = make_rng(6);
  Embedder e(small_conv_config());
  e.init(rng);
  Bag bag;
  bag.id = "b";
  for (int k = 0; k < 3; ++k) bag.instances.push_back(make_patch({2, 8, 8}, 10 + k));
  const Mat m = e.embed_bag(bag);
  REQUIRE(m.rows() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK((m.row(k).transpose() - e.embed(bag.instances[static_cast<size_t>(k)]))
              .norm() < 1e-12);
  }

  Bag permuted = bag;
  std::swap(permuted.instances[0], permuted.instances[2]);
  const Mat p = e.embed_bag(permuted);
  CHECK((p.row(0) - m.row(2)).norm() == 0.0);
  CHECK((p.row(2) - m.row(0)).norm() == 0.0);

  Bag single;
  single.instances.push_back(bag.instances[0]);
  CHECK(e.embed_bag(single).rows() == 1);
}

TEST_CASE("augment: identity, involution, range") {
  const Instance patch = make_patch({3, 6, 6}, 7);
  auto rng = make_rng(8);

  AugmentSpec off;
  CHECK_FALSE(off.enabled());
  CHECK(augment(off, patch, rng).pixels == patch.pixels);

  CHECK(flip_horizontal(flip_horizontal(patch)).pixels == patch.pixels);
  CHECK(flip_vertical(flip_vertical(patch)).pixels == patch.pixels);
  Instance r = patch;
  for (int i = 0; i < 4; ++i) r = rotate90(r);
  CHECK(r.pixels == patch.pixels);

  AugmentSpec heavy = AugmentSpec::desk_default();
  heavy.brightness = 0.5;
  heavy.noise_sigma = 0.3;
  for (int trial = 0; trial < 50; ++trial) {
    const Instance out = augment(heavy, patch, rng);
    CHECK(out.shape == patch.shape);
    for (double v : out.pixels) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("clone is deep and serialization round trips bit exact") {
  auto rng = make_rng(9);
  Embedder e(small_conv_config());
  e.init(rng);
  Embedder copy = clone_embedder(e);
  CHECK(copy.fingerprint() == e.fingerprint());

  std::ostringstream sa, sb;
  e.to_checkpoint().save(sa);
  copy.to_checkpoint().save(sb);
  CHECK(sa.str() == sb.str());

  // Perturb the clone; the original must not move.
  const std::uint64_t before = e.fingerprint();
  copy.params()[0].data[0] += 1.0;
  CHECK(e.fingerprint() == before);
  CHECK(copy.fingerprint() != before);

  std::istringstream in(sa.str());
  Embedder restored = Embedder::from_checkpoint(Checkpoint::load(in));
  CHECK(restored.fingerprint() == e.fingerprint());
  const Instance patch = make_patch({2, 8, 8}, 10);
  CHECK(restored.embed(patch) == e.embed(patch));
}

TEST_CASE("embedder gradients match finite differences") {
  auto rng = make_rng(11);
  Embedder e(small_conv_config());
  e.init(rng);
  const Instance patch = make_patch({2, 8, 8}, 12);

  // Scalar probe: a fixed random linear functional of the embedding.
  Vec probe(5);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int i = 0; i < 5; ++i) probe[i] = dist(rng);

  e.zero_grad();
  EmbedCache cache;
  e.embed(patch, cache);
  e.backward(cache, probe);

  auto f = [&] { return probe.dot(e.embed(patch)); };
  const double worst =
      oracle::max_fd_rel_error(f, e.params(), e.grads(), rng, 8);
  CHECK(worst < 1e-3);
}

TEST_CASE("gaussian-mode projection gradients match finite differences") {
  auto rng = make_rng(13);
  Embedder e(EmbedderConfig::vector_mode(6, 4));
  e.init(rng);
  Instance inst;
  inst.shape = {6, 1, 1};
  inst.unit_range = false;
  inst.pixels = {0.3, -0.7, 1.1, 0.0, 2.0, -0.2};

  Vec probe(4);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int i = 0; i < 4; ++i) probe[i] = dist(rng);

  e.zero_grad();
  EmbedCache cache;
  e.embed(inst, cache);
  e.backward(cache, probe);
  auto f = [&] { return probe.dot(e.embed(inst)); };
  CHECK(oracle::max_fd_rel_error(f, e.params(), e.grads(), rng, 10) < 1e-3);
}
