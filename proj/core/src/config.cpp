#include "icmil/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "icmil/dataset_io.hpp"

namespace icmil {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("config: bad boolean for " + key + ": " + v);
}

std::vector<int> parse_int_list(std::string v) {
  for (auto& c : v) {
    if (c == ',') c = ' ';
  }
  std::istringstream is(v);
  std::vector<int> out;
  for (int x; is >> x;) out.push_back(x);
  return out;
}

std::string join(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace

RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig cfg;
  // key handlers per section; anything not listed is an error.
  using Setter = std::function<void(const std::string&)>;
  std::map<std::string, std::map<std::string, Setter>> schema;

  auto& ds = schema["dataset"];
  ds["kind"] = [&](const std::string& v) { cfg.dataset.kind = v; };
  ds["n_bags"] = [&](const std::string& v) { cfg.dataset.n_bags = std::stoi(v); };
  ds["k_min"] = [&](const std::string& v) { cfg.dataset.k_min = std::stoi(v); };
  ds["k_max"] = [&](const std::string& v) { cfg.dataset.k_max = std::stoi(v); };
  ds["dim"] = [&](const std::string& v) { cfg.dataset.dim = std::stoi(v); };
  ds["class_separation"] = [&](const std::string& v) {
    cfg.dataset.class_separation = std::stod(v);
  };
  ds["positive_ratio"] = [&](const std::string& v) {
    cfg.dataset.positive_ratio = std::stod(v);
  };
  ds["witness_rate"] = [&](const std::string& v) {
    cfg.dataset.witness_rate = std::stod(v);
  };
  ds["patch_channels"] = [&](const std::string& v) {
    cfg.dataset.patch_channels = std::stoi(v);
  };
  ds["patch_height"] = [&](const std::string& v) {
    cfg.dataset.patch_height = std::stoi(v);
  };
  ds["patch_width"] = [&](const std::string& v) {
    cfg.dataset.patch_width = std::stoi(v);
  };
  ds["path"] = [&](const std::string& v) { cfg.dataset.path = v; };
  ds["seed"] = [&](const std::string& v) { cfg.dataset.seed = std::stoull(v); };

  auto& sp = schema["split"];
  sp["train"] = [&](const std::string& v) { cfg.split.train_frac = std::stod(v); };
  sp["val"] = [&](const std::string& v) { cfg.split.val_frac = std::stod(v); };
  sp["test"] = [&](const std::string& v) { cfg.split.test_frac = std::stod(v); };
  sp["seed"] = [&](const std::string& v) { cfg.split.seed = std::stoull(v); };

  auto& md = schema["model"];
  md["aggregator"] = [&](const std::string& v) { cfg.model.aggregator = v; };
  md["d_hidden"] = [&](const std::string& v) { cfg.model.d_hidden = std::stoi(v); };
  md["d_attn"] = [&](const std::string& v) { cfg.model.d_attn = std::stoi(v); };
  md["d_feat"] = [&](const std::string& v) { cfg.model.d_feat = std::stoi(v); };
  md["conv_channels"] = [&](const std::string& v) {
    cfg.model.conv_channels = parse_int_list(v);
  };
  md["classifier_hidden"] = [&](const std::string& v) {
    cfg.model.classifier_hidden = parse_int_list(v);
  };
  md["identity_projection"] = [&](const std::string& v) {
    cfg.model.identity_projection = parse_bool(v, "identity_projection");
  };

  auto& s1 = schema["stage_one"];
  s1["learning_rate"] = [&](const std::string& v) {
    cfg.stage_one.learning_rate = std::stod(v);
  };
  s1["epochs"] = [&](const std::string& v) { cfg.stage_one.epochs = std::stoi(v); };
  s1["batch_size"] = [&](const std::string& v) {
    cfg.stage_one.batch_size = std::stoi(v);
  };
  s1["select_best_val"] = [&](const std::string& v) {
    cfg.stage_one.select_best_val = parse_bool(v, "select_best_val");
  };

  auto& cp = schema["coupling"];
  cp["alpha"] = [&](const std::string& v) { cfg.coupling.alpha = std::stod(v); };
  cp["learning_rate"] = [&](const std::string& v) {
    cfg.coupling.learning_rate = std::stod(v);
  };
  cp["iterations"] = [&](const std::string& v) {
    cfg.coupling.iterations = std::stoi(v);
  };
  cp["batch_size"] = [&](const std::string& v) {
    cfg.coupling.batch_size = std::stoi(v);
  };
  cp["epsilon"] = [&](const std::string& v) { cfg.coupling.epsilon = std::stod(v); };
  cp["variant"] = [&](const std::string& v) { cfg.coupling.variant = v; };
  cp["flip_horizontal"] = [&](const std::string& v) {
    cfg.coupling.flip_horizontal = parse_bool(v, "flip_horizontal");
  };
  cp["flip_vertical"] = [&](const std::string& v) {
    cfg.coupling.flip_vertical = parse_bool(v, "flip_vertical");
  };
  cp["rotate90"] = [&](const std::string& v) {
    cfg.coupling.rotate90 = parse_bool(v, "rotate90");
  };
  cp["brightness"] = [&](const std::string& v) {
    cfg.coupling.brightness = std::stod(v);
  };
  cp["noise_sigma"] = [&](const std::string& v) {
    cfg.coupling.noise_sigma = std::stod(v);
  };

  auto& ic = schema["icmil"];
  ic["T"] = [&](const std::string& v) { cfg.icmil.t = std::stod(v); };
  ic["warm_start"] = [&](const std::string& v) {
    cfg.icmil.warm_start = parse_bool(v, "warm_start");
  };

  auto& rn = schema["run"];
  rn["seed"] = [&](const std::string& v) { cfg.seed = std::stoull(v); };
  rn["out"] = [&](const std::string& v) { cfg.out = v; };

  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      if (!schema.count(section)) {
        throw std::runtime_error("config: unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: bad line " + std::to_string(lineno) +
                               ": " + line);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty() || !schema[section].count(key)) {
      throw std::runtime_error("config: unknown key '" + key + "' in [" +
                               section + "]");
    }
    schema[section][key](value);
  }

  if (std::abs(cfg.icmil.t * 2.0 - std::lround(cfg.icmil.t * 2.0)) > 1e-9 ||
      cfg.icmil.t < 0.0) {
    throw std::runtime_error("config: T must be a nonnegative multiple of 0.5");
  }
  if (cfg.coupling.variant != "teacher-student" &&
      cfg.coupling.variant != "naive") {
    throw std::runtime_error("config: variant must be teacher-student or naive");
  }
  aggregator_kind_from_string(cfg.model.aggregator);  // validate
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_string(ss.str());
}

std::string RunConfig::resolved() const {
  std::ostringstream os;
  os << "[dataset]\n"
     << "kind = " << dataset.kind << "\n"
     << "n_bags = " << dataset.n_bags << "\n"
     << "k_min = " << dataset.k_min << "\n"
     << "k_max = " << dataset.k_max << "\n"
     << "dim = " << dataset.dim << "\n"
     << "class_separation = " << dataset.class_separation << "\n"
     << "positive_ratio = " << dataset.positive_ratio << "\n"
     << "witness_rate = " << dataset.witness_rate << "\n"
     << "patch_channels = " << dataset.patch_channels << "\n"
     << "patch_height = " << dataset.patch_height << "\n"
     << "patch_width = " << dataset.patch_width << "\n"
     << "path = " << dataset.path << "\n"
     << "seed = " << dataset.seed << "\n"
     << "[split]\n"
     << "train = " << split.train_frac << "\n"
     << "val = " << split.val_frac << "\n"
     << "test = " << split.test_frac << "\n"
     << "seed = " << split.seed << "\n"
     << "[model]\n"
     << "aggregator = " << model.aggregator << "\n"
     << "d_hidden = " << model.d_hidden << "\n"
     << "d_attn = " << model.d_attn << "\n"
     << "d_feat = " << model.d_feat << "\n"
     << "conv_channels = " << join(model.conv_channels) << "\n"
     << "classifier_hidden = " << join(model.classifier_hidden) << "\n"
     << "identity_projection = " << (model.identity_projection ? "true" : "false")
     << "\n"
     << "[stage_one]\n"
     << "learning_rate = " << stage_one.learning_rate << "\n"
     << "epochs = " << stage_one.epochs << "\n"
     << "batch_size = " << stage_one.batch_size << "\n"
     << "select_best_val = " << (stage_one.select_best_val ? "true" : "false")
     << "\n"
     << "[coupling]\n"
     << "alpha = " << coupling.alpha << "\n"
     << "learning_rate = " << coupling.learning_rate << "\n"
     << "iterations = " << coupling.iterations << "\n"
     << "batch_size = " << coupling.batch_size << "\n"
     << "epsilon = " << coupling.epsilon << "\n"
     << "variant = " << coupling.variant << "\n"
     << "flip_horizontal = " << (coupling.flip_horizontal ? "true" : "false") << "\n"
     << "flip_vertical = " << (coupling.flip_vertical ? "true" : "false") << "\n"
     << "rotate90 = " << (coupling.rotate90 ? "true" : "false") << "\n"
     << "brightness = " << coupling.brightness << "\n"
     << "noise_sigma = " << coupling.noise_sigma << "\n"
     << "[icmil]\n"
     << "T = " << icmil.t << "\n"
     << "warm_start = " << (icmil.warm_start ? "true" : "false") << "\n"
     << "[run]\n"
     << "seed = " << seed << "\n"
     << "out = " << out << "\n";
  return os.str();
}

std::uint64_t RunConfig::hash() const {
  const std::string text = resolved();
  return fingerprint_bytes(text.data(), text.size());
}

BagDataset RunConfig::make_dataset() const {
  if (dataset.kind == "gaussian") {
    GaussianBagSpec spec;
    spec.n_bags = dataset.n_bags;
    spec.k_min = dataset.k_min;
    spec.k_max = dataset.k_max;
    spec.dim = dataset.dim;
    spec.class_separation = dataset.class_separation;
    spec.positive_ratio = dataset.positive_ratio;
    spec.witness_rate = dataset.witness_rate;
    spec.seed = dataset.seed;
    return generate_gaussian_bags(spec);
  }
  if (dataset.kind == "image") {
    ImageBagSpec spec;
    spec.n_bags = dataset.n_bags;
    spec.k_min = dataset.k_min;
    spec.k_max = dataset.k_max;
    spec.positive_ratio = dataset.positive_ratio;
    spec.witness_rate = dataset.witness_rate;
    spec.patch_shape = {dataset.patch_channels, dataset.patch_height,
                        dataset.patch_width};
    spec.seed = dataset.seed;
    return generate_image_bags(spec);
  }
  if (dataset.kind == "ingest") {
    if (dataset.path.empty()) {
      throw std::runtime_error("config: ingest dataset needs a path");
    }
    return load_patch_directory(dataset.path);
  }
  throw std::runtime_error("config: unknown dataset kind '" + dataset.kind +
                           "' (valid: gaussian, image, ingest)");
}

IcmilConfig RunConfig::icmil_config(const BagDataset& ds) const {
  IcmilConfig cfg;
  if (ds.provenance == Provenance::kSyntheticGaussian ||
      (ds.patch_shape[1] == 1 && ds.patch_shape[2] == 1)) {
    cfg.embedder = EmbedderConfig::vector_mode(
        ds.patch_shape[0],
        model.identity_projection ? ds.patch_shape[0] : model.d_hidden,
        model.identity_projection);
  } else {
    cfg.embedder.mode = EmbedderConfig::Mode::kConv;
    cfg.embedder.patch_shape = ds.patch_shape;
    cfg.embedder.conv_channels = model.conv_channels;
    cfg.embedder.d_feat = model.d_feat;
    cfg.embedder.d_hidden = model.d_hidden;
  }
  cfg.aggregator = aggregator_kind_from_string(model.aggregator);
  cfg.d_attn = model.d_attn;
  cfg.classifier_hidden = model.classifier_hidden;

  cfg.stage_one.learning_rate = stage_one.learning_rate;
  cfg.stage_one.epochs = stage_one.epochs;
  cfg.stage_one.batch_size_bags = stage_one.batch_size;
  cfg.stage_one.select_best_val = stage_one.select_best_val;

  cfg.coupling.alpha = coupling.alpha;
  cfg.coupling.learning_rate = coupling.learning_rate;
  cfg.coupling.iterations = coupling.iterations;
  cfg.coupling.batch_size = coupling.batch_size;
  cfg.coupling.epsilon = coupling.epsilon;
  cfg.coupling.augment.flip_horizontal = coupling.flip_horizontal;
  cfg.coupling.augment.flip_vertical = coupling.flip_vertical;
  cfg.coupling.augment.rotate90 = coupling.rotate90;
  cfg.coupling.augment.brightness = coupling.brightness;
  cfg.coupling.augment.noise_sigma = coupling.noise_sigma;
  cfg.variant = coupling.variant == "naive" ? CouplingVariant::kNaive
                                            : CouplingVariant::kTeacherStudent;

  cfg.t_half = static_cast<int>(std::lround(icmil.t * 2.0));
  cfg.warm_start = icmil.warm_start;
  cfg.split = split;
  cfg.split.seed = split.seed;
  cfg.seed = seed;
  cfg.run_dir = out;
  return cfg;
}

}  // namespace icmil
