#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "metarange/dataset.hpp"
#include "metarange/errors.hpp"
#include "metarange/extractor.hpp"
#include "metarange/matrix.hpp"
#include "metarange/support_index.hpp"

// Adaptation heads: procedures that turn support embeddings into a linear
// classifier (prototype centroids, closed-form ridge regression, one-vs-rest
// hinge SVMs solved in the dual), plus the accuracy functional used by the
// support-set search.

namespace metarange {

enum class HeadKind { prototype, ridge, svm };

inline std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::prototype: return "prototype";
    case HeadKind::ridge: return "ridge";
    case HeadKind::svm: return "svm";
  }
  return "?";
}

inline HeadKind head_kind_from_string(const std::string& s) {
  if (s == "prototype") return HeadKind::prototype;
  if (s == "ridge") return HeadKind::ridge;
  if (s == "svm") return HeadKind::svm;
  throw ArgumentError("unknown head kind '" + s + "'");
}

enum class BiasMode { append_one, none };

struct HeadSpec {
  HeadKind kind = HeadKind::prototype;
  double lambda = 1.0;        // ridge
  double C = 1.0;             // svm
  int max_passes = 1000;      // svm
  double kkt_tol = 1e-6;      // svm
  BiasMode bias_mode = BiasMode::append_one;  // ridge only; others are analytic

  void validate() const {
    if (kind == HeadKind::ridge && !(lambda > 0.0))
      throw ArgumentError("head: ridge lambda must be > 0");
    if (kind == HeadKind::svm) {
      if (!(C > 0.0)) throw ArgumentError("head: svm C must be > 0");
      if (max_passes < 1) throw ArgumentError("head: svm max_passes must be >= 1");
      if (!(kkt_tol > 0.0)) throw ArgumentError("head: svm kkt_tol must be > 0");
    }
  }
};

/// Support embeddings with local labels; every class 0..K-1 appears exactly
/// J times.
struct SupportSet {
  Mat embeddings;           // (K*J) x e
  std::vector<int> labels;  // local labels
  int num_classes = 0;
  int shots = 0;

  void validate() const {
    if (num_classes < 2) throw ArgumentError("support set: need K >= 2");
    if (shots < 1) throw ArgumentError("support set: need J >= 1");
    if (embeddings.rows != labels.size() ||
        embeddings.rows != static_cast<std::size_t>(num_classes * shots))
      throw ArgumentError("support set: row/label counts inconsistent");
    std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) {
      if (y < 0 || y >= num_classes) throw ArgumentError("support set: label out of range");
      ++counts[static_cast<std::size_t>(y)];
    }
    for (int c : counts)
      if (c != shots) throw ArgumentError("support set: every class must appear exactly J times");
  }
};

struct LinearClassifier {
  Mat weights;  // K x e
  Vec biases;   // K
  HeadKind head_kind = HeadKind::prototype;
};

/// Centroid head: scores are monotone in the negative squared distance to
/// the class centroid (weights 2*c_k, bias -|c_k|^2).
inline LinearClassifier fit_prototype(const SupportSet& support) {
  support.validate();
  const std::size_t k = static_cast<std::size_t>(support.num_classes);
  const std::size_t e = support.embeddings.cols;
  Mat centroids(k, e);
  for (std::size_t i = 0; i < support.embeddings.rows; ++i) {
    const auto cls = static_cast<std::size_t>(support.labels[i]);
    for (std::size_t d = 0; d < e; ++d) centroids(cls, d) += support.embeddings(i, d);
  }
  for (auto& v : centroids.a) v /= static_cast<double>(support.shots);

  LinearClassifier cls;
  cls.head_kind = HeadKind::prototype;
  cls.weights = Mat(k, e);
  cls.biases.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double sq = 0.0;
    for (std::size_t d = 0; d < e; ++d) {
      cls.weights(c, d) = 2.0 * centroids(c, d);
      sq += centroids(c, d) * centroids(c, d);
    }
    cls.biases[c] = -sq;
  }
  return cls;
}

/// Multi-target ridge regression against one-hot labels, solved through the
/// n x n system W = Phi^T (Phi Phi^T + lambda I)^{-1} Y with n = K*J (n is
/// always the small side here).
inline LinearClassifier fit_ridge(const SupportSet& support, double lambda,
                                  BiasMode bias_mode = BiasMode::append_one) {
  support.validate();
  if (!(lambda > 0.0)) throw ArgumentError("fit_ridge: lambda must be > 0");
  const std::size_t n = support.embeddings.rows;
  const std::size_t e = support.embeddings.cols;
  const std::size_t cols = bias_mode == BiasMode::append_one ? e + 1 : e;
  const std::size_t k = static_cast<std::size_t>(support.num_classes);

  Mat phi(n, cols);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < e; ++d) phi(i, d) = support.embeddings(i, d);
    if (bias_mode == BiasMode::append_one) phi(i, e) = 1.0;
  }
  Mat gram(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      gram(i, j) = dot(phi.row(i), phi.row(j), cols) + (i == j ? lambda : 0.0);
  Mat targets(n, k);
  for (std::size_t i = 0; i < n; ++i)
    targets(i, static_cast<std::size_t>(support.labels[i])) = 1.0;

  const Mat coeffs = solve_spd(gram, targets);   // n x K
  const Mat w_full = matmul(transpose(phi), coeffs);  // cols x K

  LinearClassifier cls;
  cls.head_kind = HeadKind::ridge;
  cls.weights = Mat(k, e);
  cls.biases.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < e; ++d) cls.weights(c, d) = w_full(d, c);
    if (bias_mode == BiasMode::append_one) cls.biases[c] = w_full(e, c);
  }
  return cls;
}

struct SvmFit {
  LinearClassifier classifier;
  bool converged = false;
  double max_kkt_violation = 0.0;
  int passes_used = 0;
};

namespace detail {

struct BinarySvmSolution {
  Vec alpha;
  double bias = 0.0;
  bool converged = false;
  double max_violation = 0.0;
  int passes = 0;
};

/// SMO on the standard dual with the equality constraint sum(alpha_i y_i)=0.
/// Pair selection and tie-breaking are index-ordered so the solve is
/// deterministic.
inline BinarySvmSolution solve_binary_svm(const Mat& gram, const std::vector<double>& y,
                                          double C, int max_passes, double kkt_tol) {
  const std::size_t n = y.size();
  BinarySvmSolution sol;
  sol.alpha.assign(n, 0.0);
  double b = 0.0;

  auto margin_sum = [&](std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (sol.alpha[j] != 0.0) s += sol.alpha[j] * y[j] * gram(i, j);
    return s;
  };
  auto dual_objective = [&](const Vec& alpha) {
    double lin = 0.0, quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      lin += alpha[i];
      if (alpha[i] == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j)
        quad += alpha[i] * alpha[j] * y[i] * y[j] * gram(i, j);
    }
    return lin - 0.5 * quad;
  };
  auto kkt_violation = [&](std::size_t i) {
    const double yf = y[i] * (margin_sum(i) + b);
    const double slack = 1e-12 * C;
    if (sol.alpha[i] <= slack) return std::max(0.0, 1.0 - yf);
    if (sol.alpha[i] >= C - slack) return std::max(0.0, yf - 1.0);
    return std::abs(yf - 1.0);
  };

  for (int pass = 0; pass < max_passes; ++pass) {
    sol.passes = pass + 1;
    bool updated = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double ei = margin_sum(i) + b - y[i];
      const double ri = y[i] * ei;
      const bool violates = (ri < -kkt_tol && sol.alpha[i] < C) ||
                            (ri > kkt_tol && sol.alpha[i] > 0.0);
      if (!violates) continue;

      // partner: largest |E_i - E_j|, lowest index on ties
      std::size_t j = n;
      double best_gap = -1.0;
      for (std::size_t cand = 0; cand < n; ++cand) {
        if (cand == i) continue;
        const double gap = std::abs(ei - (margin_sum(cand) + b - y[cand]));
        if (gap > best_gap) {
          best_gap = gap;
          j = cand;
        }
      }
      if (j == n) continue;

      const double ej = margin_sum(j) + b - y[j];
      const double ai_old = sol.alpha[i], aj_old = sol.alpha[j];
      double lo, hi;
      if (y[i] != y[j]) {
        lo = std::max(0.0, aj_old - ai_old);
        hi = std::min(C, C + aj_old - ai_old);
      } else {
        lo = std::max(0.0, ai_old + aj_old - C);
        hi = std::min(C, ai_old + aj_old);
      }
      if (hi - lo < 1e-15) continue;

      const double eta = gram(i, i) + gram(j, j) - 2.0 * gram(i, j);
      double aj_new;
      if (eta > 1e-12) {
        aj_new = aj_old + y[j] * (ei - ej) / eta;
        aj_new = std::clamp(aj_new, lo, hi);
      } else {
        // flat direction: evaluate the dual objective at both ends
        Vec trial = sol.alpha;
        const double s = y[i] * y[j];
        trial[j] = lo;
        trial[i] = ai_old + s * (aj_old - lo);
        const double lo_obj = dual_objective(trial);
        trial[j] = hi;
        trial[i] = ai_old + s * (aj_old - hi);
        const double hi_obj = dual_objective(trial);
        if (hi_obj > lo_obj + 1e-12)
          aj_new = hi;
        else if (lo_obj > hi_obj + 1e-12)
          aj_new = lo;
        else
          continue;
      }
      if (std::abs(aj_new - aj_old) < 1e-14) continue;
      const double ai_new = ai_old + y[i] * y[j] * (aj_old - aj_new);
      sol.alpha[i] = ai_new;
      sol.alpha[j] = aj_new;

      const double b1 = b - ei - y[i] * (ai_new - ai_old) * gram(i, i) -
                        y[j] * (aj_new - aj_old) * gram(i, j);
      const double b2 = b - ej - y[i] * (ai_new - ai_old) * gram(i, j) -
                        y[j] * (aj_new - aj_old) * gram(j, j);
      const double slack = 1e-12 * C;
      if (ai_new > slack && ai_new < C - slack)
        b = b1;
      else if (aj_new > slack && aj_new < C - slack)
        b = b2;
      else
        b = 0.5 * (b1 + b2);
      updated = true;
    }

    // recompute the bias from support-vector conditions, then check KKT
    double interior_sum = 0.0;
    int interior_count = 0;
    double b_lo = -std::numeric_limits<double>::infinity();
    double b_hi = std::numeric_limits<double>::infinity();
    const double slack = 1e-12 * C;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = margin_sum(i);
      const double bound = y[i] - s;  // b value that puts i exactly on the margin
      if (sol.alpha[i] > slack && sol.alpha[i] < C - slack) {
        interior_sum += bound;
        ++interior_count;
      } else if (sol.alpha[i] <= slack) {
        // require y_i (s + b) >= 1
        if (y[i] > 0.0) b_lo = std::max(b_lo, bound);
        else b_hi = std::min(b_hi, bound);
      } else {
        // require y_i (s + b) <= 1
        if (y[i] > 0.0) b_hi = std::min(b_hi, bound);
        else b_lo = std::max(b_lo, bound);
      }
    }
    if (interior_count > 0) {
      b = interior_sum / interior_count;
    } else if (std::isfinite(b_lo) && std::isfinite(b_hi)) {
      b = 0.5 * (b_lo + b_hi);
    } else if (std::isfinite(b_lo)) {
      b = b_lo;
    } else if (std::isfinite(b_hi)) {
      b = b_hi;
    }

    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, kkt_violation(i));
    sol.max_violation = worst;
    if (worst < kkt_tol) {
      sol.converged = true;
      break;
    }
    if (!updated) break;  // no progress possible
  }
  sol.bias = b;
  return sol;
}

}  // namespace detail

/// One-vs-rest hinge-loss SVMs solved in the dual by paired coordinate
/// ascent. Non-convergence is reported through the flag, not an exception.
inline SvmFit fit_svm(const SupportSet& support, double C, int max_passes = 1000,
                      double kkt_tol = 1e-6) {
  support.validate();
  if (!(C > 0.0)) throw ArgumentError("fit_svm: C must be > 0");
  const std::size_t n = support.embeddings.rows;
  const std::size_t e = support.embeddings.cols;
  const std::size_t k = static_cast<std::size_t>(support.num_classes);

  Mat gram(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      gram(i, j) = gram(j, i) = dot(support.embeddings.row(i), support.embeddings.row(j), e);

  SvmFit fit;
  fit.classifier.head_kind = HeadKind::svm;
  fit.classifier.weights = Mat(k, e);
  fit.classifier.biases.assign(k, 0.0);
  fit.converged = true;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i)
      y[i] = support.labels[i] == static_cast<int>(c) ? 1.0 : -1.0;
    const auto sol = detail::solve_binary_svm(gram, y, C, max_passes, kkt_tol);
    for (std::size_t i = 0; i < n; ++i) {
      if (sol.alpha[i] == 0.0) continue;
      const double coef = sol.alpha[i] * y[i];
      for (std::size_t d = 0; d < e; ++d)
        fit.classifier.weights(c, d) += coef * support.embeddings(i, d);
    }
    fit.classifier.biases[c] = sol.bias;
    fit.converged = fit.converged && sol.converged;
    fit.max_kkt_violation = std::max(fit.max_kkt_violation, sol.max_violation);
    fit.passes_used = std::max(fit.passes_used, sol.passes);
  }
  return fit;
}

inline LinearClassifier fit_head(const SupportSet& support, const HeadSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case HeadKind::prototype: return fit_prototype(support);
    case HeadKind::ridge: return fit_ridge(support, spec.lambda, spec.bias_mode);
    case HeadKind::svm: return fit_svm(support, spec.C, spec.max_passes, spec.kkt_tol).classifier;
  }
  throw ArgumentError("fit_head: unknown head kind");
}

inline int predict(const LinearClassifier& cls, const double* embedding, std::size_t e) {
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cls.weights.rows; ++c) {
    const double s = dot(cls.weights.row(c), embedding, e) + cls.biases[c];
    if (s > best_score) {  // ties stay with the lowest class index
      best_score = s;
      best = static_cast<int>(c);
    }
  }
  return best;
}

/// Fraction of queries whose argmax score matches the label; argmax ties go
/// to the lowest class index.
inline double evaluate_accuracy(const LinearClassifier& cls, const Mat& query_embeddings,
                                const std::vector<int>& query_labels) {
  if (query_embeddings.rows == 0) throw ArgumentError("evaluate_accuracy: empty query set");
  if (query_embeddings.rows != query_labels.size())
    throw ArgumentError("evaluate_accuracy: embedding/label count mismatch");
  if (query_embeddings.cols != cls.weights.cols)
    throw ArgumentError("evaluate_accuracy: embedding dim mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < query_embeddings.rows; ++i)
    if (predict(cls, query_embeddings.row(i), query_embeddings.cols) == query_labels[i])
      ++correct;
  return static_cast<double>(correct) / static_cast<double>(query_embeddings.rows);
}

/// Precomputed episode scorer: embeds the support pool and the query set
/// once, then scoring a candidate index set is just a head fit plus an
/// accuracy evaluation. Pure and safe to call concurrently.
class EpisodeScorer {
 public:
  EpisodeScorer(const ExtractorParams& params, const HeadSpec& head, const Episode& episode)
      : head_(head), shape_(episode.shape) {
    head_.validate();
    for (const Mat& pool : episode.support_pool)
      pool_embeddings_.push_back(forward(params, pool));
    query_embeddings_ = forward(params, episode.query_inputs);
    query_labels_ = episode.query_labels;
  }

  const EpisodeShape& shape() const { return shape_; }

  /// Builds the support set for the given per-class indices (class-major,
  /// shot order preserved) and returns post-adaptation query accuracy.
  double score_indices(const std::vector<std::vector<int>>& indices) const {
    const std::size_t e = query_embeddings_.cols;
    SupportSet support;
    support.num_classes = shape_.way;
    support.shots = shape_.shots;
    support.embeddings = Mat(static_cast<std::size_t>(shape_.way * shape_.shots), e);
    std::size_t row = 0;
    for (int k = 0; k < shape_.way; ++k) {
      for (int j = 0; j < shape_.shots; ++j) {
        const int m = indices[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        const Mat& pool = pool_embeddings_[static_cast<std::size_t>(k)];
        for (std::size_t d = 0; d < e; ++d)
          support.embeddings(row, d) = pool(static_cast<std::size_t>(m), d);
        support.labels.push_back(k);
        ++row;
      }
    }
    const LinearClassifier cls = fit_head(support, head_);
    return evaluate_accuracy(cls, query_embeddings_, query_labels_);
  }

  double operator()(const SupportIndexSet& z) const {
    z.validate(shape_.pool_size);
    if (static_cast<int>(z.indices.size()) != shape_.way ||
        static_cast<int>(z.indices.front().size()) != shape_.shots)
      throw ArgumentError("support indices do not match the episode shape");
    return score_indices(z.indices);
  }

  const Mat& query_embeddings() const { return query_embeddings_; }
  const std::vector<int>& query_labels() const { return query_labels_; }
  const std::vector<Mat>& pool_embeddings() const { return pool_embeddings_; }

 private:
  HeadSpec head_;
  EpisodeShape shape_;
  std::vector<Mat> pool_embeddings_;
  Mat query_embeddings_;
  std::vector<int> query_labels_;
};

/// R(Z, X, D): embeds the selected support and all queries, fits the head,
/// and returns query accuracy. The search module consumes this through an
/// EpisodeScorer so the embeddings are computed once per episode.
inline double adapt_and_score(const ExtractorParams& params, const HeadSpec& head,
                              const Episode& episode, const SupportIndexSet& z) {
  return EpisodeScorer(params, head, episode)(z);
}

}  // namespace metarange
