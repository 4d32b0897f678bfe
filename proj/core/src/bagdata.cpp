#include "icmil/bagdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "icmil/rng.hpp"

namespace icmil {

int bag_label_from_instances(const std::vector<int>& instance_labels) {
  if (instance_labels.empty()) {
    throw std::invalid_argument("empty bag");
  }
  for (int y : instance_labels) {
    if (y != 0 && y != 1) {
      throw std::invalid_argument("instance label must be 0 or 1");
    }
    if (y == 1) return 1;
  }
  return 0;
}

namespace {

// Decide per-bag labels and witness counts shared by both generators.
struct BagPlan {
  int k = 0;
  int label = 0;
  int n_witness = 0;
};

std::vector<BagPlan> plan_bags(int n_bags, int k_min, int k_max,
                               double positive_ratio, double witness_rate,
                               std::mt19937_64& rng) {
  if (n_bags < 2) throw std::invalid_argument("need at least 2 bags");
  if (k_min < 1 || k_max < k_min) throw std::invalid_argument("bad k range");
  if (witness_rate <= 0.0 || witness_rate > 1.0) {
    throw std::invalid_argument("witness_rate must be in (0,1]");
  }
  if (positive_ratio < 0.0 || positive_ratio > 1.0) {
    throw std::invalid_argument("positive_ratio must be in [0,1]");
  }
  const int n_pos = static_cast<int>(std::lround(positive_ratio * n_bags));
  std::vector<int> labels(static_cast<size_t>(n_bags), 0);
  std::fill(labels.begin(), labels.begin() + n_pos, 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::uniform_int_distribution<int> k_dist(k_min, k_max);
  std::vector<BagPlan> plans(static_cast<size_t>(n_bags));
  for (int i = 0; i < n_bags; ++i) {
    BagPlan& p = plans[static_cast<size_t>(i)];
    p.k = k_dist(rng);
    p.label = labels[static_cast<size_t>(i)];
    p.n_witness =
        p.label == 1 ? static_cast<int>(std::ceil(witness_rate * p.k)) : 0;
  }
  return plans;
}

// Positions of the witnesses inside a bag, shuffled so they are not always
// the leading instances.
std::vector<int> instance_classes(const BagPlan& plan, std::mt19937_64& rng) {
  std::vector<int> cls(static_cast<size_t>(plan.k), 0);
  std::fill(cls.begin(), cls.begin() + plan.n_witness, 1);
  std::shuffle(cls.begin(), cls.end(), rng);
  return cls;
}

std::string bag_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "bag_%04d", index);
  return buf;
}

// Class-conditioned sinusoidal texture: class 0 is a low-frequency grating,
// class 1 a high-frequency one, random orientation and phase per patch.
Instance render_patch(const std::array<int, 3>& shape, int cls,
                      std::mt19937_64& rng) {
  const int c = shape[0], h = shape[1], w = shape[2];
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double freq = cls == 0 ? 1.5 : 5.0;
  const double theta = unit(rng) * M_PI;
  const double phase = unit(rng) * 2.0 * M_PI;
  const double cx = std::cos(theta), sx = std::sin(theta);
  std::normal_distribution<double> noise(0.0, 0.05);

  Instance inst;
  inst.shape = shape;
  inst.true_class = cls;
  inst.pixels.resize(static_cast<size_t>(c * h * w));
  for (int ch = 0; ch < c; ++ch) {
    const double tint = 0.8 + 0.2 * ch / std::max(1, c - 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double t = 2.0 * M_PI * freq * (cx * x + sx * y) / w + phase;
        double v = 0.5 + 0.4 * tint * std::sin(t) + noise(rng);
        v = std::clamp(v, 0.0, 1.0);
        inst.pixels[static_cast<size_t>((ch * h + y) * w + x)] = v;
      }
    }
  }
  return inst;
}

}  // namespace

BagDataset generate_image_bags(const ImageBagSpec& spec) {
  if (spec.patch_shape[0] < 1 || spec.patch_shape[1] < 1 ||
      spec.patch_shape[2] < 1) {
    throw std::invalid_argument("bad patch shape");
  }
  auto rng = make_rng(spec.seed, 0x1aa6e);
  auto plans = plan_bags(spec.n_bags, spec.k_min, spec.k_max,
                         spec.positive_ratio, spec.witness_rate, rng);

  BagDataset ds;
  ds.num_classes = 2;
  ds.patch_shape = spec.patch_shape;
  ds.provenance = Provenance::kSyntheticImage;
  for (int i = 0; i < spec.n_bags; ++i) {
    const BagPlan& plan = plans[static_cast<size_t>(i)];
    Bag bag;
    bag.id = bag_name(i);
    auto classes = instance_classes(plan, rng);
    std::vector<int> labels;
    for (int cls : classes) {
      bag.instances.push_back(render_patch(spec.patch_shape, cls, rng));
      labels.push_back(cls);
    }
    bag.label = bag_label_from_instances(labels);
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

BagDataset generate_gaussian_bags(const GaussianBagSpec& spec) {
  if (spec.dim < 2) throw std::invalid_argument("dim must be >= 2");
  if (spec.class_separation < 0.0) {
    throw std::invalid_argument("class_separation must be >= 0");
  }
  auto rng = make_rng(spec.seed, 0x9a055);
  auto plans = plan_bags(spec.n_bags, spec.k_min, spec.k_max,
                         spec.positive_ratio, spec.witness_rate, rng);

  std::normal_distribution<double> gauss(0.0, 1.0);
  BagDataset ds;
  ds.num_classes = 2;
  ds.patch_shape = {spec.dim, 1, 1};
  ds.provenance = Provenance::kSyntheticGaussian;
  for (int i = 0; i < spec.n_bags; ++i) {
    const BagPlan& plan = plans[static_cast<size_t>(i)];
    Bag bag;
    bag.id = bag_name(i);
    auto classes = instance_classes(plan, rng);
    std::vector<int> labels;
    for (int cls : classes) {
      Instance inst;
      inst.shape = ds.patch_shape;
      inst.true_class = cls;
      inst.unit_range = false;
      inst.pixels.resize(static_cast<size_t>(spec.dim));
      for (int d = 0; d < spec.dim; ++d) {
        inst.pixels[static_cast<size_t>(d)] = gauss(rng);
      }
      // Positive class shifted along the first axis.
      if (cls == 1) inst.pixels[0] += spec.class_separation;
      bag.instances.push_back(std::move(inst));
      labels.push_back(cls);
    }
    bag.label = bag_label_from_instances(labels);
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

std::tuple<BagDataset, BagDataset, BagDataset> split_dataset(
    const BagDataset& dataset, const SplitSpec& spec) {
  const double sum = spec.train_frac + spec.val_frac + spec.test_frac;
  if (spec.train_frac <= 0.0 || spec.val_frac <= 0.0 || spec.test_frac <= 0.0 ||
      std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be positive and sum to 1");
  }
  const int n = static_cast<int>(dataset.bags.size());
  if (n < 3) throw std::invalid_argument("need at least 3 bags to split");

  auto rng = make_rng(spec.seed, 0x5b117);
  std::vector<int> by_class[2];
  for (int i = 0; i < n; ++i) {
    by_class[dataset.bags[static_cast<size_t>(i)].label].push_back(i);
  }
  const double fracs[3] = {spec.train_frac, spec.val_frac, spec.test_frac};

  // Largest remainder, ties broken train > val > test.
  auto largest_remainder = [&fracs](int m, int counts[3]) {
    double rem[3];
    int total = 0;
    for (int s = 0; s < 3; ++s) {
      const double want = fracs[s] * m;
      counts[s] = static_cast<int>(std::floor(want));
      rem[s] = want - counts[s];
      total += counts[s];
    }
    while (total < m) {
      int best = 0;
      for (int s = 1; s < 3; ++s) {
        if (rem[s] > rem[best] + 1e-12) best = s;
      }
      ++counts[best];
      rem[best] = -1.0;
      ++total;
    }
  };

  int target[3];
  largest_remainder(n, target);

  // Per-class quota, then reconcile against the overall targets so the split
  // sizes match the fractions even when a class is too small to stratify.
  int counts[2][3];
  for (int c = 0; c < 2; ++c) {
    largest_remainder(static_cast<int>(by_class[c].size()), counts[c]);
  }
  int total[3];
  for (int s = 0; s < 3; ++s) total[s] = counts[0][s] + counts[1][s];
  for (int dst = 0; dst < 3; ++dst) {
    while (total[dst] < target[dst]) {
      // Take from the most overfull split, preferring the bigger class there.
      int src = -1;
      for (int s = 0; s < 3; ++s) {
        if (total[s] > target[s] && (src < 0 || total[s] - target[s] >
                                                    total[src] - target[src])) {
          src = s;
        }
      }
      const int c = counts[0][src] >= counts[1][src] ? 0 : 1;
      --counts[c][src];
      --total[src];
      ++counts[c][dst];
      ++total[dst];
    }
  }

  std::vector<int> assigned[3];
  for (int c = 0; c < 2; ++c) {
    auto& group = by_class[c];
    std::shuffle(group.begin(), group.end(), rng);
    int pos = 0;
    for (int s = 0; s < 3; ++s) {
      for (int j = 0; j < counts[c][s]; ++j) {
        assigned[s].push_back(group[static_cast<size_t>(pos++)]);
      }
    }
  }

  std::tuple<BagDataset, BagDataset, BagDataset> out;
  BagDataset* parts[3] = {&std::get<0>(out), &std::get<1>(out),
                          &std::get<2>(out)};
  for (int s = 0; s < 3; ++s) {
    if (assigned[s].empty()) {
      throw std::invalid_argument("split would be empty");
    }
    std::sort(assigned[s].begin(), assigned[s].end());
    parts[s]->num_classes = dataset.num_classes;
    parts[s]->patch_shape = dataset.patch_shape;
    parts[s]->provenance = dataset.provenance;
    for (int i : assigned[s]) {
      parts[s]->bags.push_back(dataset.bags[static_cast<size_t>(i)]);
    }
  }
  return out;
}

}  // namespace icmil
