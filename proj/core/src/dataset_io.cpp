#include "icmil/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <opencv2/imgcodecs.hpp>
#include <sstream>
#include <stdexcept>

namespace icmil {

namespace fs = std::filesystem;

namespace {

std::string patch_name(int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "patch_%04d.%s", index, ext);
  return buf;
}

void write_png(const Instance& inst, const fs::path& path) {
  const int c = inst.shape[0], h = inst.shape[1], w = inst.shape[2];
  if (c != 1 && c != 3) {
    throw std::runtime_error("png export supports 1 or 3 channels");
  }
  cv::Mat img(h, w, c == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (c == 3) {
        // OpenCV stores BGR.
        auto& px = img.at<cv::Vec3b>(y, x);
        for (int ch = 0; ch < 3; ++ch) {
          const double v = inst.pixels[static_cast<size_t>(((2 - ch) * h + y) * w + x)];
          px[ch] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
      } else {
        const double v = inst.pixels[static_cast<size_t>(y * w + x)];
        img.at<unsigned char>(y, x) =
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  if (!cv::imwrite(path.string(), img)) {
    throw std::runtime_error("cannot write image " + path.string());
  }
}

Instance read_image(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) {
    throw std::runtime_error("unreadable image file: " + path.string());
  }
  const int c = img.channels() >= 3 ? 3 : 1;
  Instance inst;
  inst.shape = {c, img.rows, img.cols};
  inst.pixels.resize(static_cast<size_t>(inst.size()));
  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) {
      if (c == 3) {
        const auto px = img.at<cv::Vec3b>(y, x);
        for (int ch = 0; ch < 3; ++ch) {
          inst.pixels[static_cast<size_t>((ch * img.rows + y) * img.cols + x)] =
              px[2 - ch] / 255.0;
        }
      } else {
        inst.pixels[static_cast<size_t>(y * img.cols + x)] =
            img.at<unsigned char>(y, x) / 255.0;
      }
    }
  }
  return inst;
}

void write_vec(const Instance& inst, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << inst.shape[0] << "\n";
  char buf[64];
  for (size_t i = 0; i < inst.pixels.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%a", inst.pixels[i]);
    os << buf << (i + 1 == inst.pixels.size() ? "" : " ");
  }
  os << "\n";
}

Instance read_vec(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("unreadable feature file: " + path.string());
  int dim = 0;
  is >> dim;
  if (dim < 1) throw std::runtime_error("bad feature file: " + path.string());
  Instance inst;
  inst.shape = {dim, 1, 1};
  inst.unit_range = false;
  inst.pixels.resize(static_cast<size_t>(dim));
  std::string tok;
  for (int i = 0; i < dim; ++i) {
    if (!(is >> tok)) {
      throw std::runtime_error("truncated feature file: " + path.string());
    }
    inst.pixels[static_cast<size_t>(i)] = std::strtod(tok.c_str(), nullptr);
  }
  return inst;
}

}  // namespace

void save_dataset(const BagDataset& dataset, const std::string& root,
                  bool force) {
  const fs::path base(root);
  if (fs::exists(base) && !fs::is_empty(base)) {
    if (!force) {
      throw std::runtime_error("target directory not empty (use force): " + root);
    }
    fs::remove_all(base);
  }
  fs::create_directories(base);

  std::ofstream labels(base / "labels.tsv");
  std::ofstream truth;
  const bool synthetic = dataset.provenance != Provenance::kIngested;
  if (synthetic) truth.open(base / "truth.tsv");
  const bool gaussian = dataset.provenance == Provenance::kSyntheticGaussian;

  for (const Bag& bag : dataset.bags) {
    labels << bag.id << "\t" << bag.label << "\n";
    fs::create_directories(base / bag.id);
    for (size_t k = 0; k < bag.instances.size(); ++k) {
      const std::string name =
          patch_name(static_cast<int>(k), gaussian ? "vec" : "png");
      const fs::path path = base / bag.id / name;
      if (gaussian) {
        write_vec(bag.instances[k], path);
      } else {
        write_png(bag.instances[k], path);
      }
      if (synthetic) {
        truth << bag.id << "/" << name << "\t" << bag.instances[k].true_class
              << "\n";
      }
    }
  }
}

BagDataset load_patch_directory(const std::string& root) {
  const fs::path base(root);
  if (!fs::is_directory(base)) {
    throw std::runtime_error("dataset root not found: " + root);
  }
  const fs::path manifest = base / "labels.tsv";
  if (!fs::exists(manifest)) {
    throw std::runtime_error("missing manifest labels.tsv in " + root);
  }
  std::map<std::string, int> labels;
  {
    std::ifstream is(manifest);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) {
        throw std::runtime_error("bad manifest line: " + line);
      }
      labels[line.substr(0, tab)] = std::stoi(line.substr(tab + 1));
    }
  }
  std::map<std::string, int> truth;
  if (fs::exists(base / "truth.tsv")) {
    std::ifstream is(base / "truth.tsv");
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab != std::string::npos) {
        truth[line.substr(0, tab)] = std::stoi(line.substr(tab + 1));
      }
    }
  }

  std::vector<fs::path> bag_dirs;
  for (const auto& entry : fs::directory_iterator(base)) {
    if (entry.is_directory()) bag_dirs.push_back(entry.path());
  }
  std::sort(bag_dirs.begin(), bag_dirs.end());
  if (bag_dirs.empty()) throw std::runtime_error("no bag directories in " + root);

  BagDataset ds;
  ds.provenance = Provenance::kIngested;
  for (const fs::path& dir : bag_dirs) {
    const std::string id = dir.filename().string();
    const auto it = labels.find(id);
    if (it == labels.end()) {
      throw std::runtime_error("unlabeled bag: " + id);
    }
    Bag bag;
    bag.id = id;
    bag.label = it->second;

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
      const std::string ext = file.extension().string();
      Instance inst;
      if (ext == ".vec") {
        inst = read_vec(file);
      } else if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") {
        inst = read_image(file);
      } else {
        continue;
      }
      const auto t = truth.find(id + "/" + file.filename().string());
      if (t != truth.end()) inst.true_class = t->second;
      bag.instances.push_back(std::move(inst));
    }
    if (bag.instances.empty()) {
      throw std::runtime_error("empty bag directory: " + id);
    }
    ds.bags.push_back(std::move(bag));
  }

  ds.patch_shape = ds.bags.front().instances.front().shape;
  for (const Bag& bag : ds.bags) {
    for (const Instance& inst : bag.instances) {
      if (inst.shape != ds.patch_shape) {
        throw std::runtime_error("inconsistent patch shape in bag " + bag.id);
      }
    }
  }
  return ds;
}

}  // namespace icmil
