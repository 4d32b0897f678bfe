#include <benchmark/benchmark.h>

#include "icmil/aggregator.hpp"
#include "icmil/coupling.hpp"
#include "icmil/rng.hpp"

using namespace icmil;

namespace {

Mat random_embeddings(int k, int d, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(k, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

void bm_gated_attention_forward(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  GatedAttentionParams params(64, 32);
  auto rng = make_rng(1);
  params.init(rng);
  const Mat emb = random_embeddings(k, 64, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(aggregate_attention(params, emb).bag_embedding);
  }
  state.SetItemsProcessed(state.iterations() * k);
}

void bm_gated_attention_backward(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  GatedAttentionParams params(64, 32);
  auto rng = make_rng(3);
  params.init(rng);
  const Mat emb = random_embeddings(k, 64, 4);
  const Vec grad = Vec::Ones(64);
  for (auto _ : state) {
    params.zero_grad();
    AttentionCache cache;
    aggregate_attention(params, emb, cache);
    benchmark::DoNotOptimize(attention_backward(params, emb, cache, grad));
  }
  state.SetItemsProcessed(state.iterations() * k);
}

void bm_conv_embed(benchmark::State& state) {
  Embedder embedder(EmbedderConfig::desk_image({3, 32, 32}));
  auto rng = make_rng(5);
  embedder.init(rng);
  Instance patch;
  patch.shape = {3, 32, 32};
  patch.pixels.resize(3 * 32 * 32);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& v : patch.pixels) v = unit(rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(embedder.embed(patch));
  }
}

void bm_coupling_step(benchmark::State& state) {
  const int batch_size = static_cast<int>(state.range(0));
  auto rng = make_rng(6);
  TeacherBundle teacher{Embedder(EmbedderConfig::vector_mode(16, 16)),
                        ClassifierParams({16, 32, 2})};
  teacher.embedder.init(rng);
  teacher.classifier.init(rng);
  StudentBundle student = make_student(teacher);

  std::vector<Instance> pool;
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int i = 0; i < batch_size; ++i) {
    Instance inst;
    inst.shape = {16, 1, 1};
    inst.unit_range = false;
    inst.pixels.resize(16);
    for (double& v : inst.pixels) v = dist(rng);
    pool.push_back(std::move(inst));
  }
  std::vector<const Instance*> batch;
  for (const Instance& inst : pool) batch.push_back(&inst);

  CouplingConfig cfg;
  cfg.augment.noise_sigma = 0.05;
  AdamOptimizer opt(cfg.learning_rate);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        coupling_step(teacher, student, batch, cfg, opt, rng));
  }
  state.SetItemsProcessed(state.iterations() * batch_size);
}

}  // namespace

BENCHMARK(bm_gated_attention_forward)->Arg(16)->Arg(128)->Arg(1024);
BENCHMARK(bm_gated_attention_backward)->Arg(16)->Arg(128);
BENCHMARK(bm_conv_embed);
BENCHMARK(bm_coupling_step)->Arg(16)->Arg(100);

BENCHMARK_MAIN();
