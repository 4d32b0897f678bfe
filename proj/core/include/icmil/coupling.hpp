#pragma once

#include <functional>
#include <random>
#include <vector>

#include "icmil/classifier.hpp"
#include "icmil/embedder.hpp"

namespace icmil {

// Frozen g(x) and f(x); never updated during a coupling stage.
struct TeacherBundle {
  Embedder embedder;
  ClassifierParams classifier;
};

// Trainable g'(x) and f'(x), initialized as deep copies of the teacher.
struct StudentBundle {
  Embedder embedder;
  ClassifierParams classifier;
};

inline StudentBundle make_student(const TeacherBundle& teacher) {
  return StudentBundle{clone_embedder(teacher.embedder),
                       init_instance_classifier(teacher.classifier)};
}

struct CouplingConfig {
  double alpha = 0.5;          // weight of the similarity loss
  double learning_rate = 1e-3;
  int iterations = 200;        // gradient steps per full coupling stage
  int batch_size = 100;
  double epsilon = 1e-8;       // KL clamp
  AugmentSpec augment = AugmentSpec::desk_default();
  int log_every = 20;

  // Paper operating point; documented, not desk-runnable on real WSI data.
  static CouplingConfig paper_preset() {
    CouplingConfig c;
    c.learning_rate = 1e-5;
    c.iterations = 10000;
    c.batch_size = 100;
    return c;
  }
};

// KL(teacher || student) with both arguments clamped below by epsilon and
// renormalized. Inputs must already be probability vectors.
double consistency_loss(const Vec& teacher_probs, const Vec& student_probs,
                        double epsilon);

// Per-layer KL between the two classifiers' outputs on the same input.
// Hidden layer outputs are softmax-normalized over channels first; the final
// layer is already a distribution.
double weight_similarity_loss(const ClassifierOutput& teacher_out,
                              const ClassifierOutput& student_out,
                              double epsilon);

// L_c(f(g(x)), f'(g'(x'))) + alpha * L_w(f, f'), x' = augment(x).
double coupling_objective(const TeacherBundle& teacher, StudentBundle& student,
                          const Instance& patch, const CouplingConfig& config,
                          std::mt19937_64& rng);

struct CouplingStepResult {
  double l_c = 0.0;
  double l_w = 0.0;
  double total = 0.0;
};

// One gradient update to both student parameter sets over a batch; returns
// the pre-update mean loss terms. Throws on a non-finite loss.
CouplingStepResult coupling_step(const TeacherBundle& teacher,
                                 StudentBundle& student,
                                 const std::vector<const Instance*>& batch,
                                 const CouplingConfig& config,
                                 AdamOptimizer& optimizer,
                                 std::mt19937_64& rng);

struct CouplingLogEntry {
  int step = 0;
  double l_c = 0.0;
  double l_w = 0.0;
  double total = 0.0;
};

// Full coupling stage: config.iterations steps over instances sampled
// uniformly from the pool.
void run_coupling(const TeacherBundle& teacher, StudentBundle& student,
                  const std::vector<const Instance*>& pool,
                  const CouplingConfig& config, std::mt19937_64& rng,
                  const std::function<void(const CouplingLogEntry&)>& log = {});

// Hard argmax labels from the teacher, ties toward the lower class index.
std::vector<int> naive_pseudo_labels(const TeacherBundle& teacher,
                                     const std::vector<const Instance*>& instances);

// Table-style baseline: retrain a fresh embedder with cross-entropy on the
// teacher's hard pseudo labels; the temporary linear head is discarded.
Embedder naive_finetune(const TeacherBundle& teacher, Embedder fresh_embedder,
                        const std::vector<const Instance*>& instances,
                        const CouplingConfig& config, std::mt19937_64& rng);

}  // namespace icmil
