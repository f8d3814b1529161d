#pragma once

// Scoring estimated graphs against ground truth.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "gcvae/errors.hpp"
#include "gcvae/tensor.hpp"

namespace gcvae {

struct ScoredGraph {
  std::vector<double> scores;
  std::vector<bool> labels;
};

struct Normalized {
  Tensor graph;
  bool all_zero = false;
};

/// Division by the largest magnitude; an all-zero input comes back unchanged and flagged.
inline Normalized normalize_graph(const Tensor& est) {
  const double m = max_abs(est);
  if (m == 0.0) return {est, true};
  return {est / m, false};
}

/// |normalized estimate| against truth support, optionally skipping the diagonal.
inline ScoredGraph make_scored(const Tensor& est, const Tensor& truth, bool include_diagonal = true) {
  if (est.shape() != truth.shape() || est.rank() != 2 || est.dim(0) != est.dim(1))
    throw ConfigError("estimate " + shape_str(est.shape()) + " and truth " + shape_str(truth.shape()) +
                      " must be matching square matrices");
  const Tensor n = normalize_graph(est).graph;
  const std::size_t p = est.dim(0);
  ScoredGraph sg;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      if (!include_diagonal && i == j) continue;
      sg.scores.push_back(std::abs(n.at({i, j})));
      sg.labels.push_back(truth.at({i, j}) != 0.0);
    }
  return sg;
}

namespace detail {

inline void require_both_classes(const ScoredGraph& sg) {
  if (sg.scores.size() != sg.labels.size()) throw ConfigError("scores and labels differ in length");
  const auto pos = std::count(sg.labels.begin(), sg.labels.end(), true);
  if (pos == 0 || pos == static_cast<long>(sg.labels.size()))
    throw UndefinedMetric("ranking metric needs both positive and negative labels");
}

// Indices sorted by descending score.
inline std::vector<std::size_t> order_desc(const std::vector<double>& s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

// (tp, fp) after each tie group, scanning thresholds from the top.
struct Cut {
  double threshold;
  std::size_t tp;
  std::size_t fp;
};

inline std::vector<Cut> cuts(const ScoredGraph& sg) {
  const auto idx = order_desc(sg.scores);
  std::vector<Cut> out;
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    (sg.labels[idx[k]] ? tp : fp) += 1;
    if (k + 1 == idx.size() || sg.scores[idx[k + 1]] != sg.scores[idx[k]]) out.push_back({sg.scores[idx[k]], tp, fp});
  }
  return out;
}

}  // namespace detail

/// Concordance probability over positive/negative pairs, ties count one half.
/// Computed from midranks.
inline double auroc(const ScoredGraph& sg) {
  detail::require_both_classes(sg);
  const std::size_t n = sg.scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sg.scores[a] < sg.scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < n;) {
    std::size_t e = k;
    while (e + 1 < n && sg.scores[idx[e + 1]] == sg.scores[idx[k]]) ++e;
    const double mid = 0.5 * static_cast<double>(k + e) + 1.0;
    for (std::size_t r = k; r <= e; ++r)
      if (sg.labels[idx[r]]) {
        rank_sum += mid;
        ++n_pos;
      }
    k = e + 1;
  }
  const double P = static_cast<double>(n_pos), N = static_cast<double>(n - n_pos);
  // U counts concordant pairs plus half the ties; doubled to stay integral.
  const double twice_u = 2.0 * rank_sum - P * (P + 1.0);
  return twice_u / (2.0 * P * N);
}

/// Area under the precision-recall curve with step interpolation:
/// sum over distinct thresholds of (recall increment) * precision.
inline double auprc(const ScoredGraph& sg) {
  detail::require_both_classes(sg);
  const double P = static_cast<double>(std::count(sg.labels.begin(), sg.labels.end(), true));
  double area = 0.0;
  std::size_t prev_tp = 0;
  for (const auto& c : detail::cuts(sg)) {
    area += static_cast<double>(c.tp - prev_tp) / P * (static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp));
    prev_tp = c.tp;
  }
  return area;
}

struct BestF1 {
  double f1 = 0.0;
  double threshold = 0.0;
};

/// Max F1 over thresholds at each distinct score (predict score >= t);
/// ties go to the larger threshold.
inline BestF1 best_f1(const ScoredGraph& sg) {
  detail::require_both_classes(sg);
  const std::size_t P = static_cast<std::size_t>(std::count(sg.labels.begin(), sg.labels.end(), true));
  BestF1 best{-1.0, 0.0};
  for (const auto& c : detail::cuts(sg)) {
    const double f1 = 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + (P - c.tp));
    if (f1 > best.f1) best = {f1, c.threshold};  // cuts run from the largest threshold down
  }
  return best;
}

struct SweepRow {
  double threshold = 0.0;
  double tpr = 0.0;
  double tnr = 0.0;
  double acc = 0.0;
};

/// TPR/TNR/ACC of the support {score >= t}, thresholds sorted ascending.
inline std::vector<SweepRow> threshold_sweep(const ScoredGraph& sg, std::vector<double> thresholds) {
  std::sort(thresholds.begin(), thresholds.end());
  const auto P = static_cast<double>(std::count(sg.labels.begin(), sg.labels.end(), true));
  const auto N = static_cast<double>(sg.labels.size()) - P;
  std::vector<SweepRow> out;
  for (double t : thresholds) {
    double tp = 0, tn = 0;
    for (std::size_t k = 0; k < sg.scores.size(); ++k) {
      const bool pred = sg.scores[k] >= t;
      if (pred && sg.labels[k]) ++tp;
      if (!pred && !sg.labels[k]) ++tn;
    }
    out.push_back({t, P > 0 ? tp / P : 0.0, N > 0 ? tn / N : 0.0, (tp + tn) / static_cast<double>(sg.labels.size())});
  }
  return out;
}

inline std::vector<double> default_thresholds() { return {0.1, 0.2, 0.3, 0.4, 0.5}; }

struct SignAgreement {
  double fraction = 0.0;
  bool flipped = false;
  bool defined = true;
  std::size_t compared = 0;
};

inline constexpr double kSignFloor = 0.05;

/// Fraction of truth-support entries (normalized |truth| > floor) whose sign
/// the estimate reproduces, under the better of no flip and a global flip.
inline SignAgreement sign_agreement(const Tensor& est, const Tensor& truth, double floor = kSignFloor) {
  if (est.shape() != truth.shape()) throw ConfigError("sign_agreement: shape mismatch");
  const Tensor tn = normalize_graph(truth).graph;
  auto sgn = [](double v) { return (v > 0.0) - (v < 0.0); };
  std::size_t n = 0, same = 0, opposite = 0;
  for (std::size_t k = 0; k < est.size(); ++k) {
    if (truth[k] == 0.0 || std::abs(tn[k]) <= floor) continue;
    ++n;
    const int s = sgn(est[k]), t = sgn(truth[k]);
    if (s == t) ++same;
    if (s == -t) ++opposite;
  }
  if (n == 0) return {0.0, false, false, 0};
  const bool flip = opposite > same;
  return {static_cast<double>(flip ? opposite : same) / static_cast<double>(n), flip, true, n};
}

inline Tensor posthoc_average(const std::vector<Tensor>& estimates) {
  if (estimates.empty()) throw ConfigError("posthoc_average: no estimates");
  Tensor acc(estimates.front().shape());
  for (const auto& e : estimates) {
    if (e.shape() != acc.shape()) throw ConfigError("posthoc_average: shape mismatch");
    acc = acc + e;
  }
  return acc / static_cast<double>(estimates.size());
}

/// Fraction of entries where (est >= threshold) matches truth support.
inline double support_accuracy(const Tensor& est, const Tensor& truth, double threshold, bool include_diagonal = true) {
  if (est.shape() != truth.shape() || est.rank() != 2) throw ConfigError("support_accuracy: shape mismatch");
  const std::size_t p = est.dim(0);
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      if (!include_diagonal && i == j) continue;
      ++n;
      hit += (est.at({i, j}) >= threshold) == (truth.at({i, j}) != 0.0);
    }
  return static_cast<double>(hit) / static_cast<double>(n);
}

inline double frobenius_error(const Tensor& est, const Tensor& truth) {
  if (est.shape() != truth.shape()) throw ConfigError("frobenius_error: shape mismatch");
  return std::sqrt(sum_all(square(est - truth)));
}

struct GraphMetrics {
  double auroc = 0.0;
  double auprc = 0.0;
  double best_f1 = 0.0;
  double best_threshold = 0.0;
};

inline GraphMetrics ranking_report(const ScoredGraph& sg) {
  const BestF1 f = best_f1(sg);
  return {auroc(sg), auprc(sg), f.f1, f.threshold};
}

/// Metrics with and without the diagonal; either is empty when one class is missing.
struct GraphEvaluation {
  std::optional<GraphMetrics> all;
  std::optional<GraphMetrics> off_diagonal;
  std::vector<SweepRow> sweep;
  SignAgreement sign;
};

inline GraphEvaluation evaluate_graph(const Tensor& est, const Tensor& truth) {
  GraphEvaluation ev;
  const ScoredGraph all = make_scored(est, truth, true);
  try {
    ev.all = ranking_report(all);
  } catch (const UndefinedMetric&) {
  }
  try {
    ev.off_diagonal = ranking_report(make_scored(est, truth, false));
  } catch (const UndefinedMetric&) {
  }
  ev.sweep = threshold_sweep(all, default_thresholds());
  ev.sign = sign_agreement(est, truth);
  return ev;
}

}  // namespace gcvae
