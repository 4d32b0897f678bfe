// Command line front end: dataset generation, baseline and ICMIL training,
// evaluation, ablation sweeps and representation plots, all driven by a flat
// key-value config file.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "icmil/config.hpp"
#include "icmil/dataset_io.hpp"
#include "icmil/evalkit.hpp"
#include "icmil/trainer.hpp"

namespace fs = std::filesystem;
using namespace icmil;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

RunConfig load_config(const GlobalOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{}
                                           : RunConfig::from_file(opts.config_path);
  if (opts.seed) cfg.seed = *opts.seed;
  if (!opts.out.empty()) cfg.out = opts.out;
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

int cmd_generate(const GlobalOpts& opts) {
  RunConfig cfg = load_config(opts);
  if (cfg.dataset.kind == "ingest") {
    throw std::runtime_error("generate needs a synthetic dataset kind");
  }
  const BagDataset ds = cfg.make_dataset();
  save_dataset(ds, cfg.out, opts.force);
  std::cout << "wrote " << ds.bags.size() << " bags to " << cfg.out << "\n";
  return 0;
}

ICMILState run_training(RunConfig& cfg, const std::string& run_dir,
                        bool force) {
  if (force && fs::exists(run_dir)) fs::remove_all(run_dir);
  fs::create_directories(run_dir);
  const BagDataset ds = cfg.make_dataset();
  IcmilConfig icfg = cfg.icmil_config(ds);
  icfg.run_dir = run_dir;
  write_text(run_dir + "/resolved.cfg", cfg.resolved());
  return run_icmil(ds, icfg);
}

const MetricRecord& last_record(const ICMILState& state, const std::string& split) {
  for (auto it = state.history.rbegin(); it != state.history.rend(); ++it) {
    if (it->split == split) return *it;
  }
  throw std::runtime_error("no metrics recorded for split " + split);
}

int cmd_train(const GlobalOpts& opts) {
  RunConfig cfg = load_config(opts);
  const ICMILState state = run_training(cfg, cfg.out, opts.force);
  const MetricRecord& rec = last_record(state, "test");
  std::printf("AUC=%.6f F1=%.6f Acc=%.6f\n", rec.auc, rec.f1, rec.acc);
  return 0;
}

int cmd_evaluate(const GlobalOpts& opts, const std::string& run_dir_arg) {
  const std::string run_dir = run_dir_arg.empty()
                                  ? load_config(opts).out
                                  : run_dir_arg;
  RunConfig cfg = RunConfig::from_file(run_dir + "/resolved.cfg");
  const BagDataset ds = cfg.make_dataset();
  const IcmilConfig icfg = cfg.icmil_config(ds);

  // Latest completed stage.
  int last = -1;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("iter_", 0) == 0) {
      last = std::max(last, std::stoi(name.substr(5)));
    }
  }
  if (last < 0) throw std::runtime_error("no checkpoints in " + run_dir);
  const std::string dir = run_dir + "/iter_" + std::to_string(last);

  Embedder embedder =
      Embedder::from_checkpoint(Checkpoint::load_file(dir + "/embedder.ckpt"));
  BagModel model;
  model.kind = icfg.aggregator;
  model.attention = GatedAttentionParams::from_checkpoint(
      Checkpoint::load_file(dir + "/aggregator.ckpt"));
  model.classifier = ClassifierParams::from_checkpoint(
      Checkpoint::load_file(dir + "/classifier.ckpt"));

  auto [train_set, val_set, test_set] = split_dataset(ds, icfg.split);
  const BagDataset* sets[3] = {&train_set, &val_set, &test_set};
  const char* names[3] = {"train", "val", "test"};
  for (int i = 0; i < 3; ++i) {
    const auto cache = precompute_embeddings(embedder, *sets[i]);
    const MetricRecord rec = evaluate_bags(model, cache, names[i], "evaluate");
    std::printf("%s: AUC=%.6f F1=%.6f Acc=%.6f (n=%d)\n", names[i], rec.auc,
                rec.f1, rec.acc, rec.n_bags);
  }
  return 0;
}

int cmd_ablate(const GlobalOpts& opts, const std::string& mode) {
  RunConfig cfg = load_config(opts);
  fs::create_directories(cfg.out);
  if (mode == "iterations") {
    const double sweep[] = {0.0, 0.5, 1.0, 1.5, 2.0};
    std::ofstream os(cfg.out + "/ablation_iterations.csv");
    os << "T,auc,f1,acc\n";
    for (double t : sweep) {
      RunConfig point = cfg;
      point.icmil.t = t;
      char tag[32];
      std::snprintf(tag, sizeof(tag), "T%.1f", t);
      const ICMILState state =
          run_training(point, cfg.out + "/ablate_" + tag, opts.force);
      const MetricRecord& rec = last_record(state, "test");
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%.1f,%.6f,%.6f,%.6f", t, rec.auc,
                    rec.f1, rec.acc);
      os << buf << "\n";
      std::cout << "T=" << t << " AUC=" << rec.auc << "\n";
    }
    std::cout << "wrote " << cfg.out << "/ablation_iterations.csv\n";
  } else if (mode == "naive-vs-ts") {
    std::ofstream os(cfg.out + "/ablation_naive_vs_ts.csv");
    os << "method,auc,f1,acc\n";
    for (const std::string variant : {"naive", "teacher-student"}) {
      RunConfig point = cfg;
      point.icmil.t = 1.0;
      point.coupling.variant = variant;
      const ICMILState state =
          run_training(point, cfg.out + "/ablate_" + variant, opts.force);
      const MetricRecord& rec = last_record(state, "test");
      char buf[112];
      std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f", variant.c_str(),
                    rec.auc, rec.f1, rec.acc);
      os << buf << "\n";
      std::cout << variant << " AUC=" << rec.auc << "\n";
    }
    std::cout << "wrote " << cfg.out << "/ablation_naive_vs_ts.csv\n";
  } else {
    throw std::runtime_error("unknown ablation mode '" + mode +
                             "' (valid: iterations, naive-vs-ts)");
  }
  return 0;
}

cv::Scalar role_color(PointRole role) {
  switch (role) {
    case PointRole::kInstanceNegative: return {200, 160, 80, 0};   // light blue
    case PointRole::kInstancePositive: return {80, 120, 230, 0};   // light red
    case PointRole::kBagNegative: return {140, 70, 0, 0};          // dark blue
    case PointRole::kBagPositive: return {0, 0, 180, 0};           // dark red
  }
  return {0, 0, 0, 0};
}

void render_scatter(const ProjectionExport& proj, const std::string& path) {
  const int size = 640, margin = 40;
  cv::Mat canvas(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& p : proj.points) {
    xmin = std::min(xmin, p.x), xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y), ymax = std::max(ymax, p.y);
  }
  const double sx = (size - 2 * margin) / std::max(1e-12, xmax - xmin);
  const double sy = (size - 2 * margin) / std::max(1e-12, ymax - ymin);
  for (const auto& p : proj.points) {
    const int px = margin + static_cast<int>((p.x - xmin) * sx);
    const int py = size - margin - static_cast<int>((p.y - ymin) * sy);
    const bool is_bag = p.role == PointRole::kBagNegative ||
                        p.role == PointRole::kBagPositive;
    cv::circle(canvas, {px, py}, is_bag ? 6 : 2, role_color(p.role),
               cv::FILLED, cv::LINE_AA);
  }
  if (!cv::imwrite(path, canvas)) {
    throw std::runtime_error("cannot write " + path);
  }
}

ProjectionExport project_state(const Embedder& embedder, const BagModel& model,
                               const BagDataset& set) {
  std::vector<PointRole> inst_roles, bag_roles;
  std::vector<std::string> inst_ids, bag_ids;
  std::vector<Vec> inst_rows, bag_rows;
  for (const Bag& bag : set.bags) {
    const Mat emb = embedder.embed_bag(bag);
    for (Eigen::Index k = 0; k < emb.rows(); ++k) {
      inst_rows.push_back(emb.row(k));
      inst_roles.push_back(bag.label == 1 ? PointRole::kInstancePositive
                                          : PointRole::kInstanceNegative);
      inst_ids.push_back(bag.id);
    }
    bag_rows.push_back(model.bag_embedding(emb));
    bag_roles.push_back(bag.label == 1 ? PointRole::kBagPositive
                                       : PointRole::kBagNegative);
    bag_ids.push_back(bag.id);
  }
  Mat inst(static_cast<Eigen::Index>(inst_rows.size()), inst_rows[0].size());
  for (size_t i = 0; i < inst_rows.size(); ++i) {
    inst.row(static_cast<Eigen::Index>(i)) = inst_rows[i].transpose();
  }
  Mat bags(static_cast<Eigen::Index>(bag_rows.size()), bag_rows[0].size());
  for (size_t i = 0; i < bag_rows.size(); ++i) {
    bags.row(static_cast<Eigen::Index>(i)) = bag_rows[i].transpose();
  }
  return project_embeddings(inst, inst_roles, inst_ids, bags, bag_roles,
                            bag_ids);
}

int cmd_plot(const std::string& run_dir) {
  RunConfig cfg = RunConfig::from_file(run_dir + "/resolved.cfg");
  const BagDataset ds = cfg.make_dataset();
  const IcmilConfig icfg = cfg.icmil_config(ds);
  auto [train_set, val_set, test_set] = split_dataset(ds, icfg.split);

  int last = -1;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("iter_", 0) == 0) {
      last = std::max(last, std::stoi(name.substr(5)));
    }
  }
  if (last < 0) throw std::runtime_error("no checkpoints in " + run_dir);
  for (const std::string dir :
       {run_dir + "/iter_0", run_dir + "/iter_" + std::to_string(last)}) {
    if (!fs::exists(dir)) {
      throw std::runtime_error("missing checkpoint directory: " + dir);
    }
  }

  for (const auto& [tag, stage] :
       std::vector<std::pair<std::string, int>>{{"before", 0}, {"after", last}}) {
    const std::string dir = run_dir + "/iter_" + std::to_string(stage);
    Embedder embedder =
        Embedder::from_checkpoint(Checkpoint::load_file(dir + "/embedder.ckpt"));
    BagModel model;
    model.kind = icfg.aggregator;
    model.attention = GatedAttentionParams::from_checkpoint(
        Checkpoint::load_file(dir + "/aggregator.ckpt"));
    model.classifier = ClassifierParams::from_checkpoint(
        Checkpoint::load_file(dir + "/classifier.ckpt"));
    const ProjectionExport proj = project_state(embedder, model, test_set);
    write_projection_csv(proj, run_dir + "/projection_" + tag + ".csv");
    render_scatter(proj, run_dir + "/projection_" + tag + ".png");
  }

  // Metrics-vs-iteration curve (test AUC).
  std::ifstream is(run_dir + "/metrics.csv");
  if (!is) throw std::runtime_error("missing metrics.csv in " + run_dir);
  std::vector<std::pair<double, double>> curve;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string stage, iter, split, auc;
    std::getline(ls, stage, ',');
    std::getline(ls, iter, ',');
    std::getline(ls, split, ',');
    std::getline(ls, auc, ',');
    if (split == "test") curve.emplace_back(std::stod(iter), std::stod(auc));
  }
  {
    const int w = 640, h = 400, margin = 50;
    cv::Mat canvas(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
    cv::line(canvas, {margin, h - margin}, {w - margin, h - margin}, {0, 0, 0});
    cv::line(canvas, {margin, h - margin}, {margin, margin}, {0, 0, 0});
    if (curve.size() > 1) {
      const double tmax = curve.back().first;
      for (size_t i = 1; i < curve.size(); ++i) {
        auto px = [&](const std::pair<double, double>& p) {
          return cv::Point(
              margin + static_cast<int>((w - 2 * margin) * p.first /
                                        std::max(1e-12, tmax)),
              h - margin - static_cast<int>((h - 2 * margin) * p.second));
        };
        cv::line(canvas, px(curve[i - 1]), px(curve[i]), {180, 90, 0}, 2,
                 cv::LINE_AA);
      }
    }
    if (!cv::imwrite(run_dir + "/metrics_curve.png", canvas)) {
      throw std::runtime_error("cannot write metrics_curve.png");
    }
  }
  std::cout << "wrote projection_{before,after}.{csv,png} and metrics_curve.png in "
            << run_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ICMIL laboratory: iteratively coupled multiple instance learning"};
  app.require_subcommand(1);
  app.fallthrough();  // allow global flags after the subcommand

  GlobalOpts opts;
  app.add_option("--config", opts.config_path, "Run config file");
  app.add_option("--seed", opts.seed, "Override [run] seed");
  app.add_option("--out", opts.out, "Override [run] out directory");
  app.add_flag("--force", opts.force, "Overwrite existing outputs");

  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset to disk");
  auto* train = app.add_subcommand("train", "Run the full training pipeline");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a finished run");
  std::string eval_run_dir;
  evaluate->add_option("run_dir", eval_run_dir, "Run directory (default: config out)");
  auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep");
  std::string mode = "iterations";
  ablate->add_option("--mode", mode, "iterations | naive-vs-ts");
  auto* plot = app.add_subcommand("plot", "Export representation plots for a run");
  std::string plot_run_dir;
  plot->add_option("run_dir", plot_run_dir, "Run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(opts);
    if (train->parsed()) return cmd_train(opts);
    if (evaluate->parsed()) return cmd_evaluate(opts, eval_run_dir);
    if (ablate->parsed()) return cmd_ablate(opts, mode);
    if (plot->parsed()) return cmd_plot(plot_run_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return std::string(e.what()).rfind("diverged", 0) == 0 ? 2 : 1;
  }
  return 1;
}
