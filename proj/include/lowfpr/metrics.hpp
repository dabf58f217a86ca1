#pragma once

// Threshold-sweep metrics for binary classifiers scored by p(positive).
//
// Conventions, fixed across the library:
//   * an example is predicted positive iff score >= threshold, so tied
//     scores enter the predicted-positive set together;
//   * ROC curves carry one point per distinct observed score, preceded by
//     a +infinity sentinel at (fpr 0, tpr 0);
//   * TPR@FPR=alpha is the maximum tpr among curve points with fpr <= alpha,
//     with no interpolation between points. Under heavy score ties (for
//     example many scores saturated at exactly 1.0) this can legitimately
//     drop to zero even when looser alphas do fine.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lowfpr/error.hpp"

namespace lowfpr {

// ===== ROC =====

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // strictly descending thresholds, sentinel first
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

namespace detail {

inline void check_scored_labels(const std::vector<double>& scores,
                                const std::vector<bool>& labels) {
  if (scores.size() != labels.size())
    throw LengthMismatchError("scores and labels differ in length: " +
                              std::to_string(scores.size()) + " vs " +
                              std::to_string(labels.size()));
}

/** Average 1-based ranks with ties sharing their mean rank. */
inline std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  std::vector<double> ranks(values.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double shared = 0.5 * (double(i + 1) + double(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

/**
 * Builds the ROC curve over every distinct observed score.
 * Requires at least one example of each class; throws DegenerateLabelsError
 * otherwise. The final point is always (min score, 1, 1).
 */
inline RocCurve roc_curve(const std::vector<double>& scores, const std::vector<bool>& labels) {
  detail::check_scored_labels(scores, labels);

  RocCurve curve;
  for (bool l : labels) (l ? curve.n_pos : curve.n_neg)++;
  if (curve.n_pos == 0 || curve.n_neg == 0)
    throw DegenerateLabelsError("roc_curve requires both classes present (n_pos=" +
                                std::to_string(curve.n_pos) +
                                ", n_neg=" + std::to_string(curve.n_neg) + ")");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double value = scores[order[i]];
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == value) {
      (labels[order[j]] ? tp : fp)++;
      ++j;
    }
    curve.points.push_back(
        {value, double(fp) / double(curve.n_neg), double(tp) / double(curve.n_pos)});
    i = j;
  }
  return curve;
}

/**
 * Highest tpr among curve points whose fpr does not exceed alpha.
 * Returns 0 when only the all-negative sentinel qualifies.
 */
inline double tpr_at_fpr(const RocCurve& curve, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  double best = 0.0;
  for (const auto& p : curve.points) {
    if (p.fpr <= alpha) best = std::max(best, p.tpr);
  }
  return best;
}

// ===== Greedy report =====

/**
 * Greedy operating point at a fixed threshold (default 0.5; a score tied
 * with tau counts as positive). Rates whose denominator class is absent
 * are reported as disengaged optionals rather than NaN.
 */
struct GreedyReport {
  double accuracy = 0.0;
  std::optional<double> gfpr;  // false positives / negatives
  std::optional<double> grec;  // true positives / positives (greedy recall)
  double tau = 0.5;            // decision threshold that produced the report
  std::size_t n = 0;
};

inline GreedyReport greedy_report(const std::vector<double>& scores,
                                  const std::vector<bool>& labels, double tau = 0.5) {
  detail::check_scored_labels(scores, labels);
  if (scores.empty()) throw DegenerateLabelsError("greedy_report on empty input");

  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= tau;
    if (labels[i]) (predicted ? tp : fn)++;
    else (predicted ? fp : tn)++;
  }

  GreedyReport r;
  r.tau = tau;
  r.n = scores.size();
  r.accuracy = double(tp + tn) / double(r.n);
  if (fp + tn > 0) r.gfpr = double(fp) / double(fp + tn);
  if (tp + fn > 0) r.grec = double(tp) / double(tp + fn);
  return r;
}

// ===== Operating points =====

/** The alpha grid reported throughout: 0.1%, 1%, 3%, 5%, 15%. */
inline const std::vector<double>& default_alpha_set() {
  static const std::vector<double> alphas{0.001, 0.01, 0.03, 0.05, 0.15};
  return alphas;
}

/** Greedy metrics, TPR at each alpha, and AUROC for one score set. */
struct OperatingPointReport {
  GreedyReport greedy;
  std::map<double, double> tpr_at;
  double auroc = 0.0;
};

// ===== AUROC =====

/**
 * Area under the ROC curve via the rank-sum (Mann-Whitney) statistic with
 * averaged tie ranks; identical to pairwise counting with ties worth 0.5,
 * and to the trapezoidal area under the tie-grouped curve.
 */
inline double auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  detail::check_scored_labels(scores, labels);
  std::size_t n_pos = 0, n_neg = 0;
  for (bool l : labels) (l ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw DegenerateLabelsError("auroc requires both classes present");

  const std::vector<double> ranks = detail::average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i]) rank_sum += ranks[i];
  }
  const double u = rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
  return u / (double(n_pos) * double(n_neg));
}

/** Computes the full operating-point report for one score/label set. */
inline OperatingPointReport operating_point_report(
    const std::vector<double>& scores, const std::vector<bool>& labels,
    const std::vector<double>& alphas = default_alpha_set(), double tau = 0.5) {
  OperatingPointReport report;
  report.greedy = greedy_report(scores, labels, tau);
  const RocCurve curve = roc_curve(scores, labels);
  for (const double alpha : alphas) report.tpr_at[alpha] = tpr_at_fpr(curve, alpha);
  report.auroc = auroc(scores, labels);
  return report;
}

// ===== Logit transform =====

/** ln(p / (1-p)) with p clamped into [eps, 1-eps] first. */
inline double logit_transform(double p, double eps = 1e-6) {
  const double clamped = std::min(std::max(p, eps), 1.0 - eps);
  return std::log(clamped / (1.0 - clamped));
}

// ===== Score histograms =====

struct ScoreHistogram {
  std::vector<std::size_t> positive;
  std::vector<std::size_t> negative;
  double lo = 0.0;
  double hi = 1.0;
};

/** Per-class counts over equal-width bins; out-of-range values clip to end bins. */
inline ScoreHistogram score_histogram(const std::vector<double>& scores,
                                      const std::vector<bool>& labels, std::size_t bins,
                                      double lo = 0.0, double hi = 1.0) {
  detail::check_scored_labels(scores, labels);
  if (bins == 0 || !(hi > lo)) throw ConfigError("score_histogram needs bins > 0 and hi > lo");

  ScoreHistogram h;
  h.lo = lo;
  h.hi = hi;
  h.positive.assign(bins, 0);
  h.negative.assign(bins, 0);
  const double width = (hi - lo) / double(bins);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto bin = std::size_t(std::max(0.0, std::floor((scores[i] - lo) / width)));
    if (bin >= bins) bin = bins - 1;
    (labels[i] ? h.positive : h.negative)[bin]++;
  }
  return h;
}

// ===== Spearman rank correlation =====

/** Pearson correlation of average ranks. Needs n >= 3 and variance on both sides. */
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3)
    throw LengthMismatchError("spearman needs two equally sized series of length >= 3");

  const std::vector<double> rx = detail::average_ranks(x);
  const std::vector<double> ry = detail::average_ranks(y);
  const double n = double(rx.size());

  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;

  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw ZeroVarianceError("spearman undefined when one series is constant");
  return sxy / std::sqrt(sxx * syy);
}

// ===== Ensembling =====

/** Elementwise w * on + (1 - w) * off. Weights 1 and 0 reproduce an input exactly. */
inline std::vector<double> ensemble(const std::vector<double>& scores_on,
                                    const std::vector<double>& scores_off, double w) {
  if (scores_on.size() != scores_off.size())
    throw LengthMismatchError("ensemble inputs differ in length");
  if (w < 0.0 || w > 1.0) throw ConfigError("ensemble weight must lie in [0, 1]");

  std::vector<double> out(scores_on.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (w == 1.0 || scores_on[i] == scores_off[i]) out[i] = scores_on[i];
    else if (w == 0.0) out[i] = scores_off[i];
    else out[i] = w * scores_on[i] + (1.0 - w) * scores_off[i];
  }
  return out;
}

/** Same, but refuses silently misaligned inputs by checking ids pairwise. */
inline std::vector<double> ensemble_by_id(const std::vector<std::string>& ids_on,
                                          const std::vector<double>& scores_on,
                                          const std::vector<std::string>& ids_off,
                                          const std::vector<double>& scores_off, double w) {
  if (ids_on.size() != scores_on.size() || ids_off.size() != scores_off.size() ||
      ids_on.size() != ids_off.size())
    throw LengthMismatchError("ensemble inputs differ in length");
  for (std::size_t i = 0; i < ids_on.size(); ++i) {
    if (ids_on[i] != ids_off[i])
      throw IdMisalignmentError("ensemble inputs disagree at position " + std::to_string(i) +
                                ": \"" + ids_on[i] + "\" vs \"" + ids_off[i] + "\"");
  }
  return ensemble(scores_on, scores_off, w);
}

// ===== Cross-dataset averaging =====

/** Dataset-size weighted mean of per-dataset values; keys must match exactly. */
inline double weighted_average(const std::map<std::string, double>& values,
                               const std::map<std::string, std::size_t>& sizes) {
  if (values.size() != sizes.size())
    throw KeyMismatchError("weighted_average key sets differ in size");
  double num = 0.0;
  double den = 0.0;
  for (const auto& [key, value] : values) {
    auto it = sizes.find(key);
    if (it == sizes.end()) throw KeyMismatchError("weighted_average missing size for \"" + key + "\"");
    num += double(it->second) * value;
    den += double(it->second);
  }
  if (den == 0.0) throw KeyMismatchError("weighted_average with all sizes zero");
  return num / den;
}

// ===== Mode-flip transition matrix =====

/**
 * Counts examples by (label, ThinkOff prediction, ThinkOn prediction).
 * The two summaries follow the flow-diagram reading: how many negatives the
 * reasoning pass rescued from a ThinkOff false positive, and how many it
 * newly broke.
 */
struct TransitionMatrix {
  // indexed [label][pred_off][pred_on], false = 0, true = 1
  std::size_t cells[2][2][2] = {};

  std::size_t count(bool label, bool pred_off, bool pred_on) const {
    return cells[label ? 1 : 0][pred_off ? 1 : 0][pred_on ? 1 : 0];
  }

  std::size_t corrected_by_reasoning() const { return count(false, true, false); }
  std::size_t broken_by_reasoning() const { return count(false, false, true); }

  std::size_t total() const {
    std::size_t t = 0;
    for (int l = 0; l < 2; ++l)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) t += cells[l][a][b];
    return t;
  }
};

inline TransitionMatrix transition_matrix(const std::vector<bool>& preds_off,
                                          const std::vector<bool>& preds_on,
                                          const std::vector<bool>& labels) {
  if (preds_off.size() != preds_on.size() || preds_off.size() != labels.size())
    throw LengthMismatchError("transition_matrix inputs differ in length");
  TransitionMatrix m;
  for (std::size_t i = 0; i < labels.size(); ++i)
    m.cells[labels[i] ? 1 : 0][preds_off[i] ? 1 : 0][preds_on[i] ? 1 : 0]++;
  return m;
}

}  // namespace lowfpr
