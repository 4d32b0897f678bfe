#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace icmil {

// One patch. For image data `pixels` holds channels*height*width values in
// [0,1]; for the gaussian feature variant the shape is (dim,1,1) and values
// are unbounded (unit_range = false).
struct Instance {
  std::array<int, 3> shape{0, 0, 0};  // channels, height, width
  std::vector<double> pixels;
  int true_class = -1;  // -1 when unknown (ingested data)
  bool unit_range = true;

  int size() const { return shape[0] * shape[1] * shape[2]; }
};

struct Bag {
  std::vector<Instance> instances;
  int label = 0;  // {0,1}
  std::string id;
};

enum class Provenance { kSyntheticImage, kSyntheticGaussian, kIngested };

struct BagDataset {
  std::vector<Bag> bags;
  int num_classes = 2;
  std::array<int, 3> patch_shape{0, 0, 0};
  Provenance provenance = Provenance::kIngested;
};

struct SplitSpec {
  double train_frac = 0.7;
  double val_frac = 0.1;
  double test_frac = 0.2;
  std::uint64_t seed = 0;
};

}  // namespace icmil
