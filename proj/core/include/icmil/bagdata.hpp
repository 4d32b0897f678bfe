#pragma once

#include <cstdint>
#include <tuple>
#include <vector>

#include "icmil/types.hpp"

namespace icmil {

// MIL labeling rule: a bag is positive iff it contains a positive instance.
// Throws std::invalid_argument on an empty list.
int bag_label_from_instances(const std::vector<int>& instance_labels);

struct ImageBagSpec {
  int n_bags = 10;
  int k_min = 4;
  int k_max = 8;
  double positive_ratio = 0.5;
  double witness_rate = 0.25;
  std::array<int, 3> patch_shape{3, 16, 16};
  std::uint64_t seed = 0;
};

struct GaussianBagSpec {
  int n_bags = 10;
  int k_min = 4;
  int k_max = 8;
  int dim = 16;
  double class_separation = 3.0;
  double positive_ratio = 0.5;
  double witness_rate = 0.2;
  std::uint64_t seed = 0;
};

// Procedural texture patches, one frequency band per class. Positive bags
// carry exactly ceil(witness_rate * K) positive instances.
BagDataset generate_image_bags(const ImageBagSpec& spec);

// Feature-vector instances drawn from two isotropic gaussians whose means are
// class_separation apart. Fast path for oracle-friendly end-to-end runs.
BagDataset generate_gaussian_bags(const GaussianBagSpec& spec);

// Stratified train/val/test split, deterministic under spec.seed.
std::tuple<BagDataset, BagDataset, BagDataset> split_dataset(
    const BagDataset& dataset, const SplitSpec& spec);

}  // namespace icmil
