#pragma once

#include <string>

#include "icmil/types.hpp"

namespace icmil {

// On-disk layout: root/<bag_id>/<patch>.png|jpg|vec, manifest root/labels.tsv
// with lines "<bag_id>\t<0|1>". Synthetic datasets additionally write
// root/truth.tsv with "<bag_id>/<patch>\t<class>" per instance. Gaussian
// feature instances are stored as .vec text files (hexfloat, bit exact).
void save_dataset(const BagDataset& dataset, const std::string& root,
                  bool force = false);

BagDataset load_patch_directory(const std::string& root);

}  // namespace icmil
