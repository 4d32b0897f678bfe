#include "icmil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "icmil/rng.hpp"

namespace icmil {

namespace fs = std::filesystem;

bool EmbeddingCache::fresh(const Embedder& embedder) const {
  return fingerprint == embedder.fingerprint();
}

EmbeddingCache precompute_embeddings(const Embedder& embedder,
                                     const BagDataset& dataset) {
  if (dataset.bags.empty()) throw std::invalid_argument("empty dataset");
  EmbeddingCache cache;
  for (const Bag& bag : dataset.bags) {
    cache.embeddings.push_back(embedder.embed_bag(bag));
    cache.labels.push_back(bag.label);
    cache.bag_ids.push_back(bag.id);
  }
  cache.fingerprint = embedder.fingerprint();
  return cache;
}

Vec BagModel::bag_embedding(const Mat& instance_embeddings) const {
  switch (kind) {
    case AggregatorKind::kAttention:
      return aggregate_attention(attention, instance_embeddings).bag_embedding;
    case AggregatorKind::kMean:
      return aggregate_pool(PoolKind::kMean, instance_embeddings);
    case AggregatorKind::kMax:
      return aggregate_pool(PoolKind::kMax, instance_embeddings);
  }
  throw std::logic_error("bad aggregator kind");
}

double BagModel::score(const Mat& instance_embeddings) const {
  return classify(classifier, bag_embedding(instance_embeddings)).probs[1];
}

double bag_stage_loss(const EmbeddingCache& cache, const BagModel& model) {
  double loss = 0.0;
  for (size_t i = 0; i < cache.embeddings.size(); ++i) {
    const Vec h = model.bag_embedding(cache.embeddings[i]);
    loss += cross_entropy(classify(model.classifier, h).probs, cache.labels[i]);
  }
  return loss / static_cast<double>(cache.embeddings.size());
}

namespace {

std::vector<double> cache_scores(const BagModel& model,
                                 const EmbeddingCache& cache) {
  std::vector<double> scores;
  scores.reserve(cache.embeddings.size());
  for (const Mat& e : cache.embeddings) scores.push_back(model.score(e));
  return scores;
}

}  // namespace

MetricRecord evaluate_bags(const BagModel& model, const EmbeddingCache& cache,
                           const std::string& split, const std::string& stage) {
  const std::vector<double> scores = cache_scores(model, cache);
  std::vector<int> preds;
  preds.reserve(scores.size());
  for (double s : scores) preds.push_back(s > 0.5 ? 1 : 0);
  MetricRecord rec;
  rec.auc = auc_score(scores, cache.labels);
  const auto [f1, acc] = f1_and_acc(preds, cache.labels);
  rec.f1 = f1;
  rec.acc = acc;
  rec.split = split;
  rec.stage = stage;
  rec.n_bags = static_cast<int>(cache.labels.size());
  return rec;
}

StageOneHistory train_bag_stage(const EmbeddingCache& train_cache,
                                const EmbeddingCache* val_cache,
                                BagModel& model, const StageOneConfig& config) {
  const size_t n = train_cache.embeddings.size();
  if (n == 0) throw std::invalid_argument("empty embedding cache");
  if (train_cache.labels.size() != n) {
    throw std::invalid_argument("cache labels misaligned");
  }

  StageOneHistory history;
  history.initial_loss = bag_stage_loss(train_cache, model);

  AdamOptimizer optimizer(config.learning_rate);
  auto rng = make_rng(config.seed, 0x57a9e1);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  BagModel best = model;
  double best_auc = -1.0;
  const bool attention = model.kind == AggregatorKind::kAttention;
  const int batch = std::max(1, config.batch_size_bags);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (size_t pos = 0; pos < n; pos += static_cast<size_t>(batch)) {
      model.classifier.zero_grad();
      if (attention) model.attention.zero_grad();
      const size_t end = std::min(n, pos + static_cast<size_t>(batch));
      for (size_t b = pos; b < end; ++b) {
        const size_t i = order[b];
        const Mat& emb = train_cache.embeddings[i];
        AttentionCache att_cache;
        Vec h;
        if (attention) {
          h = aggregate_attention(model.attention, emb, att_cache).bag_embedding;
        } else {
          h = model.bag_embedding(emb);
        }
        ClassifyCache cls_cache;
        const ClassifierOutput out = classify(model.classifier, h, cls_cache);
        epoch_loss += cross_entropy(out.probs, train_cache.labels[i]);

        Vec grad_logits = out.probs;
        grad_logits[train_cache.labels[i]] -= 1.0;
        const Vec grad_h =
            classifier_backward(model.classifier, cls_cache, grad_logits);
        if (attention) {
          attention_backward(model.attention, emb, att_cache, grad_h);
        }
      }
      const double inv = 1.0 / static_cast<double>(end - pos);
      std::vector<ParamView> params = model.classifier.params();
      std::vector<ParamView> grads = model.classifier.grads();
      if (attention) {
        for (auto& v : model.attention.params()) params.push_back(v);
        for (auto& v : model.attention.grads()) grads.push_back(v);
      }
      if (inv != 1.0) {
        for (auto& v : grads) Eigen::Map<Vec>(v.data, v.size) *= inv;
      }
      optimizer.step(params, grads);
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw std::runtime_error("diverged: non-finite stage-one loss at epoch " +
                               std::to_string(epoch));
    }
    history.epoch_loss.push_back(epoch_loss);
    if (val_cache) {
      const double auc =
          auc_score(cache_scores(model, *val_cache), val_cache->labels);
      history.val_auc.push_back(auc);
      if (auc > best_auc) {
        best_auc = auc;
        best = model;
      }
    }
  }
  if (config.select_best_val && val_cache && config.epochs > 0) {
    model = best;
  }
  return history;
}

Embedder finetune_embedder_stage(const Embedder& embedder,
                                 const ClassifierParams& bag_classifier,
                                 const BagDataset& train_set,
                                 const CouplingConfig& config,
                                 CouplingVariant variant, std::uint64_t seed,
                                 const std::string& log_path) {
  if (config.iterations == 0) return embedder;
  std::vector<const Instance*> pool;
  for (const Bag& bag : train_set.bags) {
    for (const Instance& inst : bag.instances) pool.push_back(&inst);
  }
  auto rng = make_rng(seed, 0xc0091e);

  if (variant == CouplingVariant::kNaive) {
    TeacherBundle teacher{embedder, bag_classifier};
    Embedder fresh(embedder.config());
    fresh.init(rng);
    return naive_finetune(teacher, std::move(fresh), pool, config, rng);
  }

  TeacherBundle teacher{embedder, bag_classifier};
  StudentBundle student = make_student(teacher);
  std::ofstream log;
  if (!log_path.empty()) {
    const bool existed = fs::exists(log_path);
    log.open(log_path, std::ios::app);
    if (log && !existed) log << "step,l_c,l_w,total\n";
  }
  run_coupling(teacher, student, pool, config, rng,
               [&](const CouplingLogEntry& e) {
                 if (log) {
                   char buf[128];
                   std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f", e.step,
                                 e.l_c, e.l_w, e.total);
                   log << buf << "\n";
                 }
               });
  return student.embedder;
}

namespace {

struct Stage {
  enum class Kind { kStageOne, kCoupling } kind;
  double budget_scale = 1.0;  // coupling stages only
  int half_units = 0;         // half iterations added by this stage
};

std::vector<Stage> plan_stages(int t_half) {
  if (t_half < 0) throw std::invalid_argument("negative iteration count");
  std::vector<Stage> stages;
  stages.push_back({Stage::Kind::kStageOne, 1.0, 0});
  const int full = t_half / 2;
  for (int i = 0; i < full; ++i) {
    stages.push_back({Stage::Kind::kCoupling, 1.0, 2});
    stages.push_back({Stage::Kind::kStageOne, 1.0, 0});
  }
  if (t_half % 2 == 1) {
    stages.push_back({Stage::Kind::kCoupling, 0.5, 1});
    stages.push_back({Stage::Kind::kStageOne, 1.0, 0});
  }
  return stages;
}

std::string config_signature(const IcmilConfig& cfg) {
  std::ostringstream os;
  os << cfg.embedder.describe() << "|" << to_string(cfg.aggregator) << "|attn="
     << cfg.d_attn << "|cls=";
  for (int w : cfg.classifier_hidden) os << w << ",";
  os << "|s1=" << cfg.stage_one.learning_rate << "," << cfg.stage_one.epochs
     << "," << cfg.stage_one.batch_size_bags << ","
     << cfg.stage_one.select_best_val << "|cp=" << cfg.coupling.alpha << ","
     << cfg.coupling.learning_rate << "," << cfg.coupling.iterations << ","
     << cfg.coupling.batch_size << "," << cfg.coupling.epsilon << "|aug="
     << cfg.coupling.augment.flip_horizontal << cfg.coupling.augment.flip_vertical
     << cfg.coupling.augment.rotate90 << "," << cfg.coupling.augment.brightness
     << "," << cfg.coupling.augment.noise_sigma
     << "|variant=" << (cfg.variant == CouplingVariant::kNaive ? "naive" : "ts")
     << "|t_half=" << cfg.t_half << "|warm=" << cfg.warm_start << "|split="
     << cfg.split.train_frac << "," << cfg.split.val_frac << ","
     << cfg.split.test_frac << "," << cfg.split.seed << "|seed=" << cfg.seed;
  return os.str();
}

std::string stage_dir(const std::string& run_dir, size_t stage_index) {
  return run_dir + "/iter_" + std::to_string(stage_index);
}

void save_stage(const std::string& run_dir, size_t completed,
                const ICMILState& state, const std::string& signature) {
  const std::string dir = stage_dir(run_dir, completed - 1);
  fs::create_directories(dir);
  state.embedder.to_checkpoint().save_file(dir + "/embedder.ckpt");
  state.model.attention.to_checkpoint().save_file(dir + "/aggregator.ckpt");
  state.model.classifier.to_checkpoint().save_file(dir + "/classifier.ckpt");
  std::ofstream os(run_dir + "/state.txt");
  os << "completed_stages=" << completed << "\n"
     << "half_iters_done=" << state.half_iters_done << "\n"
     << "config_hash=" << fingerprint_bytes(signature.data(), signature.size())
     << "\n";
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
  std::map<std::string, std::string> kv;
  std::ifstream is(path);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

void append_metrics(const std::string& run_dir, const MetricRecord& rec,
                    double iteration) {
  const std::string path = run_dir + "/metrics.csv";
  const bool existed = fs::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!existed) os << "stage,iteration,split,auc,f1,acc\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%.1f,%s,%.6f,%.6f,%.6f",
                rec.stage.c_str(), iteration, rec.split.c_str(), rec.auc,
                rec.f1, rec.acc);
  os << buf << "\n";
}

std::vector<MetricRecord> load_metrics(const std::string& run_dir) {
  std::vector<MetricRecord> records;
  std::ifstream is(run_dir + "/metrics.csv");
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (header) {
      header = false;
      continue;
    }
    std::istringstream ls(line);
    std::string field;
    MetricRecord rec;
    std::getline(ls, rec.stage, ',');
    std::getline(ls, field, ',');  // iteration, kept in the stage tag
    std::getline(ls, rec.split, ',');
    std::getline(ls, field, ',');
    rec.auc = std::stod(field);
    std::getline(ls, field, ',');
    rec.f1 = std::stod(field);
    std::getline(ls, field, ',');
    rec.acc = std::stod(field);
    records.push_back(rec);
  }
  return records;
}

ICMILState run_pipeline(const BagDataset& dataset, const IcmilConfig& cfg) {
  auto [train_set, val_set, test_set] = split_dataset(dataset, cfg.split);
  const auto stages = plan_stages(cfg.t_half);
  const std::string signature = config_signature(cfg);

  ICMILState state;
  state.embedder = Embedder(cfg.embedder);
  {
    auto rng = make_rng(cfg.seed, 0xe3bedd);
    state.embedder.init(rng);
  }
  state.model.kind = cfg.aggregator;
  state.model.attention =
      GatedAttentionParams(cfg.embedder.d_hidden, cfg.d_attn);
  std::vector<int> widths{cfg.embedder.d_hidden};
  for (int w : cfg.classifier_hidden) widths.push_back(w);
  widths.push_back(dataset.num_classes);
  state.model.classifier = ClassifierParams(widths);

  size_t start_stage = 0;
  if (!cfg.run_dir.empty()) {
    fs::create_directories(cfg.run_dir);
    const std::string manifest = cfg.run_dir + "/state.txt";
    if (fs::exists(manifest)) {
      auto kv = read_manifest(manifest);
      const std::uint64_t want =
          fingerprint_bytes(signature.data(), signature.size());
      if (kv.count("config_hash") &&
          std::stoull(kv["config_hash"]) == want &&
          kv.count("completed_stages")) {
        const size_t completed = std::stoull(kv["completed_stages"]);
        if (completed > 0 && completed <= stages.size()) {
          const std::string dir = stage_dir(cfg.run_dir, completed - 1);
          state.embedder = Embedder::from_checkpoint(
              Checkpoint::load_file(dir + "/embedder.ckpt"));
          state.model.attention = GatedAttentionParams::from_checkpoint(
              Checkpoint::load_file(dir + "/aggregator.ckpt"));
          state.model.classifier = ClassifierParams::from_checkpoint(
              Checkpoint::load_file(dir + "/classifier.ckpt"));
          state.half_iters_done = std::stoi(kv["half_iters_done"]);
          state.history = load_metrics(cfg.run_dir);
          start_stage = completed;
        }
      }
    }
  }

  bool model_initialized = start_stage > 0;
  for (size_t si = start_stage; si < stages.size(); ++si) {
    const Stage& stage = stages[si];
    const std::uint64_t stage_seed = mix_seed(cfg.seed, 1000 + si);

    if (stage.kind == Stage::Kind::kStageOne) {
      if (!model_initialized || !cfg.warm_start) {
        auto rng = make_rng(cfg.seed, cfg.warm_start ? 0x90de1 : 0x90de1 + si);
        state.model.attention.init(rng);
        state.model.classifier.init(rng);
        model_initialized = true;
      }
      EmbeddingCache train_cache = precompute_embeddings(state.embedder, train_set);
      EmbeddingCache val_cache = precompute_embeddings(state.embedder, val_set);
      EmbeddingCache test_cache = precompute_embeddings(state.embedder, test_set);

      StageOneConfig s1 = cfg.stage_one;
      s1.seed = stage_seed;
      train_bag_stage(train_cache, &val_cache, state.model, s1);

      const double iteration = state.half_iters_done / 2.0;
      const std::string tag = "stage1";
      const EmbeddingCache* caches[3] = {&train_cache, &val_cache, &test_cache};
      const char* splits[3] = {"train", "val", "test"};
      for (int k = 0; k < 3; ++k) {
        MetricRecord rec = evaluate_bags(state.model, *caches[k], splits[k], tag);
        state.history.push_back(rec);
        if (!cfg.run_dir.empty()) append_metrics(cfg.run_dir, rec, iteration);
      }
    } else {
      CouplingConfig cp = cfg.coupling;
      cp.iterations = static_cast<int>(
          std::llround(cp.iterations * stage.budget_scale));
      const std::string log_path =
          cfg.run_dir.empty() ? "" : cfg.run_dir + "/coupling_log.csv";
      state.embedder = finetune_embedder_stage(
          state.embedder, state.model.classifier, train_set, cp, cfg.variant,
          stage_seed, log_path);
      state.half_iters_done += stage.half_units;
    }

    if (!cfg.run_dir.empty()) {
      save_stage(cfg.run_dir, si + 1, state, signature);
    }
  }
  return state;
}

}  // namespace

ICMILState run_icmil(const BagDataset& dataset, const IcmilConfig& config) {
  return run_pipeline(dataset, config);
}

ICMILState train_baseline(const BagDataset& dataset,
                          const IcmilConfig& config) {
  IcmilConfig cfg = config;
  cfg.t_half = 0;
  return run_pipeline(dataset, cfg);
}

}  // namespace icmil
