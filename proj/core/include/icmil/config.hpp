#pragma once

#include <string>
#include <vector>

#include "icmil/trainer.hpp"

namespace icmil {

// Declarative run description, parsed from a flat [section] key = value file.
// Every field has a default; unknown sections or keys are rejected.
struct RunConfig {
  struct DatasetBlock {
    std::string kind = "gaussian";  // gaussian|image|ingest
    int n_bags = 60;
    int k_min = 5;
    int k_max = 10;
    int dim = 16;
    double class_separation = 3.0;
    double positive_ratio = 0.5;
    double witness_rate = 0.2;
    int patch_channels = 3;
    int patch_height = 16;
    int patch_width = 16;
    std::string path;  // ingest root
    std::uint64_t seed = 1;
  } dataset;

  SplitSpec split;  // seed defaults to 1

  struct ModelBlock {
    std::string aggregator = "attention";
    int d_hidden = 16;
    int d_attn = 32;
    int d_feat = 32;
    std::vector<int> conv_channels{8, 16};
    std::vector<int> classifier_hidden{32};
    bool identity_projection = true;  // gaussian mode only
  } model;

  struct StageOneBlock {
    double learning_rate = 2e-4;
    int epochs = 50;
    int batch_size = 1;
    bool select_best_val = true;
  } stage_one;

  struct CouplingBlock {
    double alpha = 0.5;
    double learning_rate = 1e-3;
    int iterations = 200;
    int batch_size = 100;
    double epsilon = 1e-8;
    std::string variant = "teacher-student";  // or "naive"
    bool flip_horizontal = true;
    bool flip_vertical = true;
    bool rotate90 = true;
    double brightness = 0.1;
    double noise_sigma = 0.02;
  } coupling;

  struct IcmilBlock {
    double t = 1.0;  // ICMIL iterations, 0.5 granularity
    bool warm_start = true;
  } icmil;

  std::uint64_t seed = 7;
  std::string out = "runs/run";

  static RunConfig from_string(const std::string& text);
  static RunConfig from_file(const std::string& path);

  // Canonical text with every field resolved; reparses to an equal config.
  std::string resolved() const;
  std::uint64_t hash() const;

  BagDataset make_dataset() const;
  IcmilConfig icmil_config(const BagDataset& dataset) const;
};

}  // namespace icmil
