#include "icmil/evalkit.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace icmil {

double auc_score(const std::vector<double>& scores,
                 const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw std::invalid_argument("scores/labels size mismatch");
  }
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("labels must be 0/1");
    n_pos += static_cast<size_t>(y);
  }
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("AUC undefined: only one class present");
  }

  // Average ranks, ties shared.
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double u = rank_sum_pos -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::pair<double, double> f1_and_acc(const std::vector<int>& pred_labels,
                                     const std::vector<int>& labels) {
  if (pred_labels.size() != labels.size() || labels.empty()) {
    throw std::invalid_argument("empty or mismatched prediction/label lists");
  }
  int tp = 0, fp = 0, fn = 0, correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (pred_labels[i] == labels[i]) ++correct;
    if (pred_labels[i] == 1 && labels[i] == 1) ++tp;
    if (pred_labels[i] == 1 && labels[i] == 0) ++fp;
    if (pred_labels[i] == 0 && labels[i] == 1) ++fn;
  }
  const double acc = static_cast<double>(correct) / labels.size();
  const double denom = 2.0 * tp + fp + fn;
  const double f1 = denom > 0.0 ? 2.0 * tp / denom : 0.0;
  return {f1, acc};
}

std::string to_string(PointRole role) {
  switch (role) {
    case PointRole::kInstanceNegative: return "instance-negative";
    case PointRole::kInstancePositive: return "instance-positive";
    case PointRole::kBagNegative: return "bag-negative";
    case PointRole::kBagPositive: return "bag-positive";
  }
  return "instance-negative";
}

ProjectionExport project_embeddings(
    const Mat& instance_embeddings, const std::vector<PointRole>& instance_roles,
    const std::vector<std::string>& instance_bag_ids,
    const Mat& bag_embeddings, const std::vector<PointRole>& bag_roles,
    const std::vector<std::string>& bag_ids, ProjectionMethod method) {
  const Eigen::Index ni = instance_embeddings.rows();
  const Eigen::Index nb = bag_embeddings.rows();
  if (ni + nb == 0) throw std::invalid_argument("no embeddings to project");
  if (static_cast<size_t>(ni) != instance_roles.size() ||
      static_cast<size_t>(ni) != instance_bag_ids.size() ||
      static_cast<size_t>(nb) != bag_roles.size() ||
      static_cast<size_t>(nb) != bag_ids.size()) {
    throw std::invalid_argument("role/id counts do not match embeddings");
  }
  const Eigen::Index d =
      ni > 0 ? instance_embeddings.cols() : bag_embeddings.cols();
  if (d < 2) throw std::invalid_argument("need at least 2 dimensions");
  if (nb > 0 && ni > 0 && bag_embeddings.cols() != d) {
    throw std::invalid_argument("instance/bag dimension mismatch");
  }

  Mat all(ni + nb, d);
  if (ni > 0) all.topRows(ni) = instance_embeddings;
  if (nb > 0) all.bottomRows(nb) = bag_embeddings;

  Mat coords;
  ProjectionExport out;
  if (method == ProjectionMethod::kIdentity) {
    out.method = "identity";
    coords = all.leftCols(2);
  } else {
    out.method = "pca";
    const Vec mean = all.colwise().mean();
    Mat centered = all.rowwise() - mean.transpose();
    Mat cov = centered.transpose() * centered / std::max<double>(1.0, all.rows() - 1.0);
    Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
    // Top two components; deterministic sign (largest-magnitude entry positive).
    Mat basis(d, 2);
    basis.col(0) = solver.eigenvectors().col(d - 1);
    basis.col(1) = solver.eigenvectors().col(d - 2);
    for (int c = 0; c < 2; ++c) {
      Eigen::Index imax = 0;
      basis.col(c).cwiseAbs().maxCoeff(&imax);
      if (basis(imax, c) < 0.0) basis.col(c) = -basis.col(c);
    }
    coords = centered * basis;
  }

  for (Eigen::Index i = 0; i < ni; ++i) {
    out.points.push_back({coords(i, 0), coords(i, 1),
                          instance_roles[static_cast<size_t>(i)],
                          instance_bag_ids[static_cast<size_t>(i)]});
  }
  for (Eigen::Index i = 0; i < nb; ++i) {
    out.points.push_back({coords(ni + i, 0), coords(ni + i, 1),
                          bag_roles[static_cast<size_t>(i)],
                          bag_ids[static_cast<size_t>(i)]});
  }
  if (!std::all_of(out.points.begin(), out.points.end(), [](const auto& p) {
        return std::isfinite(p.x) && std::isfinite(p.y);
      })) {
    throw std::runtime_error("non-finite projection coordinates");
  }
  return out;
}

void write_projection_csv(const ProjectionExport& proj,
                          const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "x,y,role,bag_id\n";
  for (const auto& p : proj.points) {
    os << p.x << "," << p.y << "," << to_string(p.role) << "," << p.bag_id
       << "\n";
  }
}

}  // namespace icmil
