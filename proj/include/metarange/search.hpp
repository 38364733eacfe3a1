#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "metarange/dataset.hpp"
#include "metarange/errors.hpp"
#include "metarange/parallel.hpp"
#include "metarange/prng.hpp"
#include "metarange/support_index.hpp"

// Greedy coordinate search over support index sets for worst/best-case
// post-adaptation accuracy, plus the exhaustive and random-baseline oracles
// used to validate it.

namespace metarange {

enum class SearchMode { worst, best };

inline std::string to_string(SearchMode m) {
  return m == SearchMode::worst ? "worst" : "best";
}

inline SearchMode search_mode_from_string(const std::string& s) {
  if (s == "worst") return SearchMode::worst;
  if (s == "best") return SearchMode::best;
  throw ArgumentError("unknown search mode '" + s + "'");
}

struct SearchConfig {
  SearchMode mode = SearchMode::worst;
  int iterations = 3;
  int restarts = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 1) throw ArgumentError("search: iterations must be >= 1");
    if (restarts < 1) throw ArgumentError("search: restarts must be >= 1");
  }
};

struct CoordinateStep {
  int iteration;     // 0-based
  int shot;          // j
  int clazz;         // k
  int chosen_index;  // the z^k_j after this update
  double accuracy;   // objective value after this update
};

struct SearchReport {
  SupportIndexSet final_indices;
  double final_accuracy = 0.0;
  std::vector<CoordinateStep> per_round_accuracy;
  /// Objective after each full iteration of the winning restart, padded with
  /// the final value when the run stopped early. Length = config.iterations.
  std::vector<double> per_iteration_accuracy;
  /// Every score() evaluation as (canonical hash, accuracy), for histograms.
  std::vector<std::pair<std::uint64_t, double>> evaluated_candidates;
  std::size_t evaluation_count = 0;
  /// Objective of the random initial Z of each restart, in restart order.
  std::vector<double> initial_accuracies;
};

using ScoreFn = std::function<double(const SupportIndexSet&)>;

namespace detail {

inline SupportIndexSet random_index_set(const EpisodeShape& shape, Prng& rng) {
  SupportIndexSet z;
  z.indices.reserve(static_cast<std::size_t>(shape.way));
  for (int k = 0; k < shape.way; ++k)
    z.indices.push_back(rng.sample_distinct(shape.pool_size, shape.shots));
  return z;
}

inline double checked_score(const ScoreFn& score, const SupportIndexSet& z) {
  const double v = score(z);
  if (!std::isfinite(v)) {
    std::string msg = "search: score returned a non-finite value for Z = [";
    for (std::size_t k = 0; k < z.indices.size(); ++k) {
      if (k) msg += "; ";
      for (std::size_t j = 0; j < z.indices[k].size(); ++j) {
        if (j) msg += ",";
        msg += std::to_string(z.indices[k][j]);
      }
    }
    throw SearchError(msg + "]");
  }
  return v;
}

}  // namespace detail

/// Greedy coordinate search: from a random initial Z, repeatedly re-optimize
/// one index z^k_j over all pool candidates not used by the other shots of
/// class k (scan order: j outer, k inner, candidates m = 0..M-1, ties to the
/// lowest m). Iterations warm-start from the previous one; a run stops early
/// when a full iteration changes nothing or fails to improve the objective.
/// With several restarts the best run wins and its trace is reported.
inline SearchReport greedy_support_search(const ScoreFn& score, const EpisodeShape& shape,
                                          const SearchConfig& config) {
  config.validate();
  if (shape.way < 1 || shape.shots < 1 || shape.pool_size < shape.shots)
    throw ArgumentError("search: invalid episode shape");
  const bool minimize = config.mode == SearchMode::worst;
  auto better = [minimize](double a, double b) { return minimize ? a < b : a > b; };

  SearchReport winner;
  bool have_winner = false;
  std::vector<std::pair<std::uint64_t, double>> all_evaluations;
  std::size_t total_evaluations = 0;
  std::vector<double> initial_accuracies;

  for (int restart = 0; restart < config.restarts; ++restart) {
    Prng rng(derive_seed(config.seed, static_cast<std::uint64_t>(restart)));
    SupportIndexSet z = detail::random_index_set(shape, rng);
    double current = detail::checked_score(score, z);
    all_evaluations.emplace_back(z.canonical_hash(), current);
    ++total_evaluations;
    initial_accuracies.push_back(current);

    SearchReport run;
    run.initial_accuracies = {current};

    for (int iter = 0; iter < config.iterations; ++iter) {
      bool changed = false;
      const double iter_start = current;
      for (int j = 0; j < shape.shots; ++j) {
        for (int k = 0; k < shape.way; ++k) {
          auto& class_indices = z.indices[static_cast<std::size_t>(k)];
          std::vector<int> candidates;
          candidates.reserve(static_cast<std::size_t>(shape.pool_size));
          for (int m = 0; m < shape.pool_size; ++m) {
            bool used_elsewhere = false;
            for (int jj = 0; jj < shape.shots; ++jj)
              if (jj != j && class_indices[static_cast<std::size_t>(jj)] == m)
                used_elsewhere = true;
            if (!used_elsewhere) candidates.push_back(m);
          }

          std::vector<double> values(candidates.size());
          parallel_for(candidates.size(), [&](std::size_t c) {
            SupportIndexSet trial = z;
            trial.indices[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] =
                candidates[c];
            values[c] = detail::checked_score(score, trial);
          });
          total_evaluations += candidates.size();
          for (std::size_t c = 0; c < candidates.size(); ++c) {
            SupportIndexSet trial = z;
            trial.indices[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] =
                candidates[c];
            all_evaluations.emplace_back(trial.canonical_hash(), values[c]);
          }

          // index-ordered argmin/argmax: lowest candidate index wins ties
          std::size_t pick = 0;
          for (std::size_t c = 1; c < candidates.size(); ++c)
            if (better(values[c], values[pick])) pick = c;

          const int old_index = class_indices[static_cast<std::size_t>(j)];
          if (candidates[pick] != old_index) changed = true;
          class_indices[static_cast<std::size_t>(j)] = candidates[pick];
          current = values[pick];
          run.per_round_accuracy.push_back({iter, j, k, candidates[pick], current});
        }
      }
      run.per_iteration_accuracy.push_back(current);
      if (!changed) break;
      if (!better(current, iter_start)) break;  // objective stopped improving
    }
    while (static_cast<int>(run.per_iteration_accuracy.size()) < config.iterations)
      run.per_iteration_accuracy.push_back(current);

    run.final_indices = z;
    run.final_accuracy = current;
    if (!have_winner || better(run.final_accuracy, winner.final_accuracy)) {
      winner = std::move(run);
      have_winner = true;
    }
  }

  winner.evaluated_candidates = std::move(all_evaluations);
  winner.evaluation_count = total_evaluations;
  winner.initial_accuracies = std::move(initial_accuracies);
  return winner;
}

namespace detail {

inline double binomial_count(int n, int k) {
  double c = 1.0;
  for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
  return c;
}

/// Advances a sorted combination to the next one in lexicographic order.
inline bool next_combination(std::vector<int>& comb, int n) {
  const int k = static_cast<int>(comb.size());
  for (int i = k - 1; i >= 0; --i) {
    if (comb[static_cast<std::size_t>(i)] < n - (k - i)) {
      ++comb[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < k; ++j)
        comb[static_cast<std::size_t>(j)] = comb[static_cast<std::size_t>(j - 1)] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace detail

struct ExhaustiveResult {
  SupportIndexSet best_indices;
  double best_accuracy = 0.0;
  std::size_t candidates_evaluated = 0;
};

/// Full enumeration in lexicographic order (per-class sorted combinations,
/// last class advancing fastest); ties keep the lexicographically smallest
/// Z. Refuses instances above the candidate budget.
inline ExhaustiveResult exhaustive_support_search(const ScoreFn& score,
                                                  const EpisodeShape& shape, SearchMode mode,
                                                  double budget = 1e5) {
  const double per_class = detail::binomial_count(shape.pool_size, shape.shots);
  const double total = std::pow(per_class, shape.way);
  if (total > budget)
    throw ConfigError("exhaustive search: " + std::to_string(total) +
                      " candidates exceed the budget of " + std::to_string(budget));
  const bool minimize = mode == SearchMode::worst;

  SupportIndexSet z;
  for (int k = 0; k < shape.way; ++k) {
    std::vector<int> comb(static_cast<std::size_t>(shape.shots));
    for (int j = 0; j < shape.shots; ++j) comb[static_cast<std::size_t>(j)] = j;
    z.indices.push_back(std::move(comb));
  }

  ExhaustiveResult result;
  bool first = true;
  for (;;) {
    const double v = detail::checked_score(score, z);
    ++result.candidates_evaluated;
    if (first || (minimize ? v < result.best_accuracy : v > result.best_accuracy)) {
      result.best_accuracy = v;
      result.best_indices = z;
      first = false;
    }
    // advance the last class first
    int k = shape.way - 1;
    while (k >= 0 && !detail::next_combination(z.indices[static_cast<std::size_t>(k)],
                                               shape.pool_size)) {
      auto& comb = z.indices[static_cast<std::size_t>(k)];
      for (int j = 0; j < shape.shots; ++j) comb[static_cast<std::size_t>(j)] = j;
      --k;
    }
    if (k < 0) break;
  }
  return result;
}

/// Accuracies of uniformly sampled legal index sets (the Avg-acc protocol).
inline std::vector<double> random_support_baseline(const ScoreFn& score,
                                                   const EpisodeShape& shape, int samples,
                                                   std::uint64_t seed) {
  if (samples < 1) throw ArgumentError("random baseline: samples must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(samples));
  parallel_for(out.size(), [&](std::size_t i) {
    Prng rng(derive_seed(seed, i));
    const SupportIndexSet z = detail::random_index_set(shape, rng);
    out[i] = detail::checked_score(score, z);
  });
  return out;
}

/// Mean objective after each full iteration, across reports (all reports
/// must have the same iteration count).
inline std::vector<double> convergence_trace(const std::vector<SearchReport>& reports) {
  if (reports.empty()) throw ArgumentError("convergence_trace: no reports");
  const std::size_t iters = reports.front().per_iteration_accuracy.size();
  for (const auto& r : reports)
    if (r.per_iteration_accuracy.size() != iters)
      throw ArgumentError("convergence_trace: reports have different iteration counts");
  std::vector<double> mean(iters, 0.0);
  for (const auto& r : reports)
    for (std::size_t i = 0; i < iters; ++i) mean[i] += r.per_iteration_accuracy[i];
  for (auto& v : mean) v /= static_cast<double>(reports.size());
  return mean;
}

/// One extra scan over the final Z; true when no single-coordinate
/// replacement improves the objective (the termination guarantee).
inline bool verify_coordinate_optimality(const ScoreFn& score, const EpisodeShape& shape,
                                         const SupportIndexSet& final_z, SearchMode mode,
                                         double final_accuracy) {
  const bool minimize = mode == SearchMode::worst;
  for (int j = 0; j < shape.shots; ++j) {
    for (int k = 0; k < shape.way; ++k) {
      for (int m = 0; m < shape.pool_size; ++m) {
        bool used = false;
        for (int jj = 0; jj < shape.shots; ++jj)
          if (final_z.indices[static_cast<std::size_t>(k)][static_cast<std::size_t>(jj)] == m)
            used = true;
        if (used) continue;
        SupportIndexSet trial = final_z;
        trial.indices[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] = m;
        const double v = score(trial);
        if (minimize ? v < final_accuracy : v > final_accuracy) return false;
      }
    }
  }
  return true;
}

}  // namespace metarange
