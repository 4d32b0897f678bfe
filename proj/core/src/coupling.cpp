#include "icmil/coupling.hpp"

#include <cmath>
#include <stdexcept>

namespace icmil {

namespace {

void check_distribution(const Vec& p, const char* what) {
  if (p.minCoeff() < -1e-9 || std::abs(p.sum() - 1.0) > 1e-5) {
    throw std::invalid_argument(std::string(what) +
                                " is not a probability vector");
  }
}

double clamped_kl(const Vec& p, const Vec& q, double epsilon) {
  Vec pc = p.array().max(epsilon).matrix();
  Vec qc = q.array().max(epsilon).matrix();
  pc /= pc.sum();
  qc /= qc.sum();
  return (pc.array() * (pc.array() / qc.array()).log()).sum();
}

// Forward and backward of one coupling objective evaluation. Gradients are
// accumulated into the student bundle; the teacher contributes none.
CouplingStepResult objective_with_grads(const TeacherBundle& teacher,
                                        StudentBundle& student,
                                        const Instance& patch,
                                        const CouplingConfig& config,
                                        std::mt19937_64& rng,
                                        bool with_grads) {
  if (config.epsilon <= 0.0) throw std::invalid_argument("epsilon must be > 0");

  // Teacher path on the original patch.
  const Vec teacher_emb = teacher.embedder.embed(patch);
  const ClassifierOutput teacher_out = classify(teacher.classifier, teacher_emb);

  // Student consistency path on the augmented patch.
  const Instance augmented = config.augment.enabled()
                                 ? augment(config.augment, patch, rng)
                                 : patch;
  EmbedCache emb_cache;
  const Vec student_emb = student.embedder.embed(augmented, emb_cache);
  ClassifyCache cls_cache;
  const ClassifierOutput student_out =
      classify(student.classifier, student_emb, cls_cache);

  CouplingStepResult res;
  res.l_c = clamped_kl(teacher_out.probs, student_out.probs, config.epsilon);

  // Similarity path: both classifiers on the same un-augmented embedding.
  ClassifyCache sim_cache;
  const ClassifierOutput student_sim =
      classify(student.classifier, teacher_emb, sim_cache);
  res.l_w = weight_similarity_loss(teacher_out, student_sim, config.epsilon);
  res.total = res.l_c + config.alpha * res.l_w;

  if (!with_grads) return res;

  // d KL(t || softmax(z)) / dz = softmax(z) - t.
  const Vec grad_logits_c = student_out.probs - teacher_out.probs;
  const Vec grad_emb =
      classifier_backward(student.classifier, cls_cache, grad_logits_c);
  student.embedder.backward(emb_cache, grad_emb);

  if (config.alpha > 0.0) {
    const int l = student.classifier.num_layers();
    std::vector<Vec> hidden_grads;
    for (int i = 0; i < l - 1; ++i) {
      const Vec p = softmax(teacher_out.layer_outputs[static_cast<size_t>(i)]);
      const Vec q = softmax(student_sim.layer_outputs[static_cast<size_t>(i)]);
      hidden_grads.push_back(config.alpha * (q - p));
    }
    const Vec grad_logits_w =
        config.alpha * (student_sim.probs - teacher_out.probs);
    // Gradient wrt the (frozen) teacher embedding is discarded.
    classifier_backward(student.classifier, sim_cache, grad_logits_w,
                        &hidden_grads);
  }
  return res;
}

}  // namespace

double consistency_loss(const Vec& teacher_probs, const Vec& student_probs,
                        double epsilon) {
  if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be > 0");
  if (teacher_probs.size() != student_probs.size()) {
    throw std::invalid_argument("probability vector size mismatch");
  }
  check_distribution(teacher_probs, "teacher_probs");
  check_distribution(student_probs, "student_probs");
  return clamped_kl(teacher_probs, student_probs, epsilon);
}

double weight_similarity_loss(const ClassifierOutput& teacher_out,
                              const ClassifierOutput& student_out,
                              double epsilon) {
  const size_t l = teacher_out.layer_outputs.size();
  if (student_out.layer_outputs.size() != l) {
    throw std::invalid_argument("layer count mismatch");
  }
  double total = 0.0;
  for (size_t i = 0; i < l; ++i) {
    const Vec& t = teacher_out.layer_outputs[i];
    const Vec& s = student_out.layer_outputs[i];
    if (t.size() != s.size()) {
      throw std::invalid_argument("layer width mismatch");
    }
    if (i + 1 == l) {
      total += clamped_kl(t, s, epsilon);  // final layer already a distribution
    } else {
      total += clamped_kl(softmax(t), softmax(s), epsilon);
    }
  }
  return total;
}

double coupling_objective(const TeacherBundle& teacher, StudentBundle& student,
                          const Instance& patch, const CouplingConfig& config,
                          std::mt19937_64& rng) {
  return objective_with_grads(teacher, student, patch, config, rng, false)
      .total;
}

CouplingStepResult coupling_step(const TeacherBundle& teacher,
                                 StudentBundle& student,
                                 const std::vector<const Instance*>& batch,
                                 const CouplingConfig& config,
                                 AdamOptimizer& optimizer,
                                 std::mt19937_64& rng) {
  if (batch.empty()) throw std::invalid_argument("empty coupling batch");
  student.embedder.zero_grad();
  student.classifier.zero_grad();

  CouplingStepResult mean;
  for (const Instance* patch : batch) {
    const auto r =
        objective_with_grads(teacher, student, *patch, config, rng, true);
    mean.l_c += r.l_c;
    mean.l_w += r.l_w;
    mean.total += r.total;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  mean.l_c *= inv;
  mean.l_w *= inv;
  mean.total *= inv;
  if (!std::isfinite(mean.total)) {
    throw std::runtime_error("diverged: non-finite coupling loss (l_c=" +
                             std::to_string(mean.l_c) +
                             ", l_w=" + std::to_string(mean.l_w) + ")");
  }

  auto scale = [inv](std::vector<ParamView> views) {
    for (auto& v : views) {
      Eigen::Map<Vec>(v.data, v.size) *= inv;
    }
    return views;
  };
  std::vector<ParamView> params = student.embedder.params();
  std::vector<ParamView> grads = scale(student.embedder.grads());
  for (auto& v : student.classifier.params()) params.push_back(v);
  for (auto& v : scale(student.classifier.grads())) grads.push_back(v);
  optimizer.step(params, grads);
  return mean;
}

void run_coupling(const TeacherBundle& teacher, StudentBundle& student,
                  const std::vector<const Instance*>& pool,
                  const CouplingConfig& config, std::mt19937_64& rng,
                  const std::function<void(const CouplingLogEntry&)>& log) {
  if (pool.empty()) throw std::invalid_argument("empty instance pool");
  AdamOptimizer optimizer(config.learning_rate);
  std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
  for (int step = 0; step < config.iterations; ++step) {
    std::vector<const Instance*> batch;
    batch.reserve(static_cast<size_t>(config.batch_size));
    for (int i = 0; i < config.batch_size; ++i) batch.push_back(pool[pick(rng)]);
    const auto r = coupling_step(teacher, student, batch, config, optimizer, rng);
    if (log && (step % std::max(1, config.log_every) == 0 ||
                step + 1 == config.iterations)) {
      log({step, r.l_c, r.l_w, r.total});
    }
  }
}

std::vector<int> naive_pseudo_labels(
    const TeacherBundle& teacher, const std::vector<const Instance*>& instances) {
  if (instances.empty()) throw std::invalid_argument("no instances");
  std::vector<int> labels;
  labels.reserve(instances.size());
  for (const Instance* patch : instances) {
    const Vec probs =
        classify(teacher.classifier, teacher.embedder.embed(*patch)).probs;
    int best = 0;
    for (Eigen::Index c = 1; c < probs.size(); ++c) {
      if (probs[c] > probs[best]) best = static_cast<int>(c);
    }
    labels.push_back(best);
  }
  return labels;
}

Embedder naive_finetune(const TeacherBundle& teacher, Embedder fresh_embedder,
                        const std::vector<const Instance*>& instances,
                        const CouplingConfig& config, std::mt19937_64& rng) {
  const std::vector<int> labels = naive_pseudo_labels(teacher, instances);
  const int c = teacher.classifier.num_classes();
  Linear head(fresh_embedder.d_hidden(), c);
  head.init_xavier(rng);

  AdamOptimizer optimizer(config.learning_rate);
  std::uniform_int_distribution<size_t> pick(0, instances.size() - 1);
  for (int step = 0; step < config.iterations; ++step) {
    fresh_embedder.zero_grad();
    head.zero_grad();
    double loss = 0.0;
    for (int i = 0; i < config.batch_size; ++i) {
      const size_t j = pick(rng);
      EmbedCache cache;
      const Vec emb = fresh_embedder.embed(*instances[j], cache);
      const Vec probs = softmax(head.forward(emb));
      loss += cross_entropy(probs, labels[j]);
      Vec grad_logits = probs;
      grad_logits[labels[j]] -= 1.0;
      const Vec grad_emb = head.backward(emb, grad_logits);
      fresh_embedder.backward(cache, grad_emb);
    }
    loss /= config.batch_size;
    if (!std::isfinite(loss)) {
      throw std::runtime_error("diverged: non-finite naive finetune loss");
    }
    const double inv = 1.0 / config.batch_size;
    std::vector<ParamView> params = fresh_embedder.params();
    std::vector<ParamView> grads = fresh_embedder.grads();
    params.push_back({"head.w", head.w.data(), head.w.size()});
    params.push_back({"head.b", head.b.data(), head.b.size()});
    grads.push_back({"head.w", head.gw.data(), head.gw.size()});
    grads.push_back({"head.b", head.gb.data(), head.gb.size()});
    for (auto& v : grads) Eigen::Map<Vec>(v.data, v.size) *= inv;
    optimizer.step(params, grads);
  }
  return fresh_embedder;
}

}  // namespace icmil
