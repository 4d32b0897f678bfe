// Test-only oracles: loop-based scalar re-implementations kept independent
// of the library's vectorized code paths, plus a central finite-difference
// gradient checker.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "icmil/nn.hpp"

namespace oracle {

// Gated attention, evaluated term by term with plain loops.
inline std::vector<double> gated_attention_scores(
    const icmil::Mat& v1, const icmil::Mat& v2, const icmil::Vec& omega,
    const icmil::Mat& embeddings) {
  const int k = static_cast<int>(embeddings.rows());
  const int d_attn = static_cast<int>(v1.rows());
  const int d_hidden = static_cast<int>(v1.cols());
  std::vector<double> logits(static_cast<size_t>(k), 0.0);
  for (int i = 0; i < k; ++i) {
    double z = 0.0;
    for (int a = 0; a < d_attn; ++a) {
      double t = 0.0, s = 0.0;
      for (int d = 0; d < d_hidden; ++d) {
        t += v1(a, d) * embeddings(i, d);
        s += v2(a, d) * embeddings(i, d);
      }
      z += omega[a] * std::tanh(t) * (1.0 / (1.0 + std::exp(-s)));
    }
    logits[static_cast<size_t>(i)] = z;
  }
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  std::vector<double> scores(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    scores[static_cast<size_t>(i)] = std::exp(logits[static_cast<size_t>(i)] - mx);
    sum += scores[static_cast<size_t>(i)];
  }
  for (double& v : scores) v /= sum;
  return scores;
}

inline std::vector<double> gated_attention_bag(const icmil::Mat& v1,
                                               const icmil::Mat& v2,
                                               const icmil::Vec& omega,
                                               const icmil::Mat& embeddings) {
  const auto scores = gated_attention_scores(v1, v2, omega, embeddings);
  const int d = static_cast<int>(embeddings.cols());
  std::vector<double> h(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < static_cast<int>(embeddings.rows()); ++i) {
    for (int j = 0; j < d; ++j) {
      h[static_cast<size_t>(j)] += scores[static_cast<size_t>(i)] * embeddings(i, j);
    }
  }
  return h;
}

// KL with the same clamp-and-renormalize convention as the library, but
// computed term by term.
inline double clamped_kl(const std::vector<double>& p,
                         const std::vector<double>& q, double eps) {
  double psum = 0.0, qsum = 0.0;
  std::vector<double> pc(p), qc(q);
  for (double& v : pc) {
    v = std::max(v, eps);
    psum += v;
  }
  for (double& v : qc) {
    v = std::max(v, eps);
    qsum += v;
  }
  double out = 0.0;
  for (size_t c = 0; c < p.size(); ++c) {
    const double pi = pc[c] / psum;
    const double qi = qc[c] / qsum;
    out += pi * std::log(pi / qi);
  }
  return out;
}

// Exhaustive pairwise Mann-Whitney AUC, ties counted 0.5.
inline double pairwise_auc(const std::vector<double>& scores,
                           const std::vector<int>& labels) {
  double wins = 0.0;
  long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Central finite difference of a scalar function wrt one parameter entry.
inline double fd_derivative(const std::function<double()>& f, double* x,
                            double step = 1e-4) {
  const double saved = *x;
  *x = saved + step;
  const double up = f();
  *x = saved - step;
  const double down = f();
  *x = saved;
  return (up - down) / (2.0 * step);
}

inline double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// Checks sampled coordinates of every view; returns the worst relative error.
inline double max_fd_rel_error(const std::function<double()>& f,
                               const std::vector<icmil::ParamView>& params,
                               const std::vector<icmil::ParamView>& grads,
                               std::mt19937_64& rng, int samples_per_view = 10,
                               double step = 1e-4) {
  double worst = 0.0;
  for (size_t v = 0; v < params.size(); ++v) {
    const Eigen::Index n = params[v].size;
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    const int checks = std::min<Eigen::Index>(samples_per_view, n);
    for (int c = 0; c < checks; ++c) {
      const Eigen::Index i = n <= samples_per_view ? c : pick(rng);
      const double numeric = fd_derivative(f, params[v].data + i, step);
      worst = std::max(worst, rel_error(grads[v].data[i], numeric));
    }
  }
  return worst;
}

}  // namespace oracle
