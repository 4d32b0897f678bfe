#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icmil/aggregator.hpp"
#include "icmil/bagdata.hpp"
#include "icmil/classifier.hpp"
#include "icmil/coupling.hpp"
#include "icmil/embedder.hpp"
#include "icmil/evalkit.hpp"

namespace icmil {

struct StageOneConfig {
  double learning_rate = 2e-4;
  int epochs = 50;        // paper preset: 200
  int batch_size_bags = 1;
  bool select_best_val = true;
  std::uint64_t seed = 0;  // filled in by the orchestrator
};

// Precomputed instance embeddings, valid only while the fingerprint matches
// the current embedder parameters.
struct EmbeddingCache {
  std::vector<Mat> embeddings;  // one K x d_hidden matrix per bag
  std::vector<int> labels;
  std::vector<std::string> bag_ids;
  std::uint64_t fingerprint = 0;

  bool fresh(const Embedder& embedder) const;
};

EmbeddingCache precompute_embeddings(const Embedder& embedder,
                                     const BagDataset& dataset);

// The bag-level model trained in stage one: a(x) plus f(x).
struct BagModel {
  AggregatorKind kind = AggregatorKind::kAttention;
  GatedAttentionParams attention;
  ClassifierParams classifier;

  Vec bag_embedding(const Mat& instance_embeddings) const;
  double score(const Mat& instance_embeddings) const;  // positive-class prob
};

struct StageOneHistory {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
  std::vector<double> val_auc;
};

// Minimize bag-level cross-entropy over the cached embeddings, one bag per
// Adam step. Keeps the best-validation-AUC parameters when a validation
// cache is supplied. Throws "diverged" on a non-finite loss.
StageOneHistory train_bag_stage(const EmbeddingCache& train_cache,
                                const EmbeddingCache* val_cache,
                                BagModel& model, const StageOneConfig& config);

double bag_stage_loss(const EmbeddingCache& cache, const BagModel& model);

MetricRecord evaluate_bags(const BagModel& model, const EmbeddingCache& cache,
                           const std::string& split, const std::string& stage);

enum class CouplingVariant { kTeacherStudent, kNaive };

struct IcmilConfig {
  EmbedderConfig embedder;
  AggregatorKind aggregator = AggregatorKind::kAttention;
  int d_attn = 32;
  std::vector<int> classifier_hidden{32};
  StageOneConfig stage_one;
  CouplingConfig coupling;
  CouplingVariant variant = CouplingVariant::kTeacherStudent;
  int t_half = 2;          // iteration budget in half-iteration units
  bool warm_start = true;  // keep theta_a, theta_f across stage ones
  SplitSpec split;
  std::uint64_t seed = 7;
  std::string run_dir;     // empty disables checkpointing
};

struct ICMILState {
  Embedder embedder;
  BagModel model;
  int half_iters_done = 0;
  std::vector<MetricRecord> history;  // one train/val/test triple per stage one
};

// Full alternating pipeline: stage one, then per iteration a coupling stage
// followed by a stage-one retrain; a trailing half iteration runs the
// coupling stage at half budget. With run_dir set, every stage is
// checkpointed and an interrupted run resumes where it stopped.
ICMILState run_icmil(const BagDataset& dataset, const IcmilConfig& config);

// The vanilla MIL baseline: stage one only (the T=0 row).
ICMILState train_baseline(const BagDataset& dataset, const IcmilConfig& config);

// finetune_embedder_stage: one coupling (or naive) stage; returns the updated
// embedder, leaving the teacher classifier untouched.
Embedder finetune_embedder_stage(const Embedder& embedder,
                                 const ClassifierParams& bag_classifier,
                                 const BagDataset& train_set,
                                 const CouplingConfig& config,
                                 CouplingVariant variant, std::uint64_t seed,
                                 const std::string& log_path = "");

}  // namespace icmil
