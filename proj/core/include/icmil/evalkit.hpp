#pragma once

#include <string>
#include <vector>

#include "icmil/nn.hpp"

namespace icmil {

struct MetricRecord {
  double auc = 0.0;
  double f1 = 0.0;
  double acc = 0.0;
  std::string split;  // train|val|test
  std::string stage;
  int n_bags = 0;
};

// Mann-Whitney AUC, ties counted 0.5. Throws when only one class is present.
double auc_score(const std::vector<double>& scores,
                 const std::vector<int>& labels);

// Positive-class F1 (0 when the denominator is 0) and plain accuracy.
std::pair<double, double> f1_and_acc(const std::vector<int>& pred_labels,
                                     const std::vector<int>& labels);

enum class PointRole {
  kInstanceNegative,
  kInstancePositive,
  kBagNegative,
  kBagPositive
};

std::string to_string(PointRole role);

struct ProjectionPoint {
  double x = 0.0;
  double y = 0.0;
  PointRole role = PointRole::kInstanceNegative;
  std::string bag_id;
};

struct ProjectionExport {
  std::vector<ProjectionPoint> points;
  std::string method;  // "pca" or "identity"
};

enum class ProjectionMethod { kPca, kIdentity };

// Joint 2D projection of instance and bag embeddings, fitted on their union
// so the relative geometry of the two populations stays comparable.
ProjectionExport project_embeddings(
    const Mat& instance_embeddings, const std::vector<PointRole>& instance_roles,
    const std::vector<std::string>& instance_bag_ids,
    const Mat& bag_embeddings, const std::vector<PointRole>& bag_roles,
    const std::vector<std::string>& bag_ids,
    ProjectionMethod method = ProjectionMethod::kPca);

void write_projection_csv(const ProjectionExport& proj,
                          const std::string& path);

}  // namespace icmil
