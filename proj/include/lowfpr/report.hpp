#pragma once

// Deterministic text rendering for evaluation results: per-mode metric
// tables, Think On / Think Off side-by-side comparisons, long-format CSV,
// and the CSV shapes consumed by plotting scripts. Everything here is pure;
// the runner owns file layout and I/O.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lowfpr/error.hpp"
#include "lowfpr/metrics.hpp"
#include "lowfpr/trajectory.hpp"
#include "lowfpr/types.hpp"

namespace lowfpr {

// ===== Cell identity =====

/** One evaluation cell: a dataset scored under a fixed (mode, scheme, certainty). */
struct CellKey {
  std::string dataset;
  InferenceMode mode = InferenceMode::ThinkOff;
  ScoringScheme scheme = ScoringScheme::TokenBased;
  CertaintyLevel certainty = CertaintyLevel::base();
};

inline std::string cell_slug(const CellKey& k) {
  return k.dataset + "__" + to_string(k.mode) + "__" + to_string(k.scheme) + "__" +
         to_string(k.certainty);
}

/** Scores for one cell, aligned by position and sorted by example id. */
struct CellScores {
  CellKey key;
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<bool> labels;
  bool partial = false;  // backing cell has fewer records than the dataset
};

// ===== Number formatting =====

/** Shortest round-trip decimal form, the one stable spelling for CSV/JSON. */
inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return nlohmann::json(v).dump();
}

inline std::string format_percent_1dp(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v * 100.0);
  return buf;
}

inline std::string format_fraction_3dp(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

/** 0.01 -> "1%", 0.15 -> "15%", 0.001 -> "0.1%". */
inline std::string alpha_label(double alpha) {
  const double pct = alpha * 100.0;
  char buf[32];
  if (std::abs(pct - double(std::llround(pct))) < 1e-9)
    std::snprintf(buf, sizeof buf, "%lld%%", std::llround(pct));
  else
    std::snprintf(buf, sizeof buf, "%.1f%%", pct);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// ===== Cross-dataset averaging =====

/** A single rendered table row: one dataset evaluated at one operating point set. */
struct MetricsRow {
  std::string name;
  std::size_t n = 0;
  OperatingPointReport opr;
  bool partial = false;
};

/**
 * Dataset-size weighted average across rows, used for every Avg. row and
 * column. gfpr/grec stay engaged only when every row carries them.
 */
inline OperatingPointReport average_report(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw InsufficientDataError("average_report over zero rows");

  std::map<std::string, std::size_t> sizes;
  for (const auto& row : rows) {
    if (!sizes.emplace(row.name, row.n).second)
      throw KeyMismatchError("duplicate dataset name \"" + row.name + "\" in average");
  }
  auto wavg = [&](auto&& pick) {
    std::map<std::string, double> values;
    for (const auto& row : rows) values[row.name] = pick(row);
    return weighted_average(values, sizes);
  };

  OperatingPointReport avg;
  avg.greedy.accuracy = wavg([](const MetricsRow& r) { return r.opr.greedy.accuracy; });
  avg.greedy.tau = rows.front().opr.greedy.tau;
  for (const auto& row : rows) avg.greedy.n += row.n;
  const bool all_gfpr = std::all_of(rows.begin(), rows.end(), [](const MetricsRow& r) {
    return r.opr.greedy.gfpr.has_value() && r.opr.greedy.grec.has_value();
  });
  if (all_gfpr) {
    avg.greedy.gfpr = wavg([](const MetricsRow& r) { return *r.opr.greedy.gfpr; });
    avg.greedy.grec = wavg([](const MetricsRow& r) { return *r.opr.greedy.grec; });
  }
  for (const auto& [alpha, ignored] : rows.front().opr.tpr_at) {
    avg.tpr_at[alpha] = wavg([alpha](const MetricsRow& r) {
      auto it = r.opr.tpr_at.find(alpha);
      if (it == r.opr.tpr_at.end())
        throw KeyMismatchError("rows disagree on alpha set in average_report");
      return it->second;
    });
  }
  avg.auroc = wavg([](const MetricsRow& r) { return r.opr.auroc; });
  return avg;
}

// ===== Text tables =====

namespace detail {

inline std::string pad_left(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

inline std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace detail

/**
 * One mode's table: datasets as rows, greedy metrics plus TPR at the listed
 * FPR budgets as columns, all values in percent with one decimal, weighted
 * Avg. row at the bottom. Rows backed by partial cells are starred.
 */
inline std::string render_mode_table(const std::string& title,
                                     const std::vector<MetricsRow>& rows,
                                     const std::vector<double>& alphas) {
  if (rows.empty()) throw InsufficientDataError("render_mode_table over zero rows");

  std::vector<std::string> headers = {"Acc.", "GFPR", "GRec."};
  for (double alpha : alphas) headers.push_back(alpha_label(alpha));

  auto row_cells = [&](const OperatingPointReport& opr) {
    std::vector<std::string> cells;
    cells.push_back(format_percent_1dp(opr.greedy.accuracy));
    cells.push_back(opr.greedy.gfpr ? format_percent_1dp(*opr.greedy.gfpr) : "-");
    cells.push_back(opr.greedy.grec ? format_percent_1dp(*opr.greedy.grec) : "-");
    for (double alpha : alphas) {
      auto it = opr.tpr_at.find(alpha);
      cells.push_back(it == opr.tpr_at.end() ? "-" : format_percent_1dp(it->second));
    }
    return cells;
  };

  std::vector<std::pair<std::string, std::vector<std::string>>> body;
  bool any_partial = false;
  for (const auto& row : rows) {
    std::string name = row.name;
    if (row.partial) {
      name += " *";
      any_partial = true;
    }
    body.emplace_back(name, row_cells(row.opr));
  }
  body.emplace_back("Avg.", row_cells(average_report(rows)));

  std::size_t name_width = std::string("Dataset").size();
  for (const auto& [name, ignored] : body) name_width = std::max(name_width, name.size());
  std::vector<std::size_t> widths;
  for (const auto& h : headers) widths.push_back(std::max<std::size_t>(h.size(), 5));
  for (const auto& [ignored, cells] : body)
    for (std::size_t c = 0; c < cells.size(); ++c) widths[c] = std::max(widths[c], cells[c].size());

  std::string out = "== " + title + " ==\n";
  out += detail::pad_right("Dataset", name_width);
  for (std::size_t c = 0; c < headers.size(); ++c)
    out += "  " + detail::pad_left(headers[c], widths[c]);
  out += '\n';
  for (const auto& [name, cells] : body) {
    out += detail::pad_right(name, name_width);
    for (std::size_t c = 0; c < cells.size(); ++c)
      out += "  " + detail::pad_left(cells[c], widths[c]);
    out += '\n';
  }
  if (any_partial) out += "* cell incomplete: metrics cover the records on disk\n";
  return out;
}

/** A dataset evaluated under both modes, for side-by-side rendering. */
struct PairedRow {
  std::string dataset;
  std::size_t n = 0;
  OperatingPointReport on;
  OperatingPointReport off;
  bool partial = false;
};

/**
 * Metric-major comparison table: one row per metric (accuracy, AUROC, then
 * TPR at each listed budget), a Think On / Think Off column pair per dataset,
 * and a combined weighted Avg. pair, all as three-decimal fractions.
 */
inline std::string render_side_by_side(const std::string& title,
                                       const std::vector<PairedRow>& rows,
                                       const std::vector<double>& alphas) {
  if (rows.empty()) throw InsufficientDataError("render_side_by_side over zero rows");

  std::vector<std::string> metric_labels = {"Accuracy", "AUROC"};
  for (double alpha : alphas) metric_labels.push_back("TPR@FPR=" + format_number(alpha));

  auto pick = [&](const OperatingPointReport& opr, std::size_t m) -> double {
    if (m == 0) return opr.greedy.accuracy;
    if (m == 1) return opr.auroc;
    auto it = opr.tpr_at.find(alphas[m - 2]);
    if (it == opr.tpr_at.end())
      throw KeyMismatchError("missing alpha " + format_number(alphas[m - 2]) +
                             " in side-by-side row");
    return it->second;
  };

  std::vector<MetricsRow> on_rows;
  std::vector<MetricsRow> off_rows;
  bool any_partial = false;
  for (const auto& row : rows) {
    on_rows.push_back({row.dataset, row.n, row.on, row.partial});
    off_rows.push_back({row.dataset, row.n, row.off, row.partial});
    any_partial = any_partial || row.partial;
  }
  const OperatingPointReport avg_on = average_report(on_rows);
  const OperatingPointReport avg_off = average_report(off_rows);

  std::size_t metric_width = std::string("Metric").size();
  for (const auto& label : metric_labels) metric_width = std::max(metric_width, label.size());

  const std::size_t sub_width = std::string("Think Off").size();  // fits "0.000"
  const std::string avg_header = std::string(display_name(InferenceMode::ThinkOn)) + " / " +
                                 display_name(InferenceMode::ThinkOff);

  std::string out = "== " + title + " ==\n";
  out += detail::pad_right("Metric", metric_width);
  for (const auto& row : rows) {
    std::string name = row.dataset + (row.partial ? " *" : "");
    out += "  " + detail::pad_right(name, 2 * sub_width + 2);
  }
  out += "  Avg.\n";
  out += detail::pad_right("", metric_width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    out += "  " + detail::pad_right(display_name(InferenceMode::ThinkOn), sub_width) + "  " +
           detail::pad_right(display_name(InferenceMode::ThinkOff), sub_width);
  out += "  " + avg_header + '\n';

  for (std::size_t m = 0; m < metric_labels.size(); ++m) {
    out += detail::pad_right(metric_labels[m], metric_width);
    for (const auto& row : rows)
      out += "  " + detail::pad_left(format_fraction_3dp(pick(row.on, m)), sub_width) + "  " +
             detail::pad_left(format_fraction_3dp(pick(row.off, m)), sub_width);
    out += "  " + format_fraction_3dp(pick(avg_on, m)) + " / " +
           format_fraction_3dp(pick(avg_off, m)) + '\n';
  }
  if (any_partial) out += "* cell incomplete: metrics cover the records on disk\n";
  return out;
}

// ===== Long-format CSV =====

/** One machine-readable metric value; `mode` also carries ensemble labels. */
struct ReportEntry {
  std::string scheme;
  std::string certainty;
  std::string mode;
  std::string dataset;
  std::string metric;
  double value = 0.0;
};

inline std::string report_csv(const std::vector<ReportEntry>& entries) {
  std::string out = "scheme,certainty,mode,dataset,metric,value\n";
  for (const auto& e : entries) {
    out += csv_escape(e.scheme) + ',' + csv_escape(e.certainty) + ',' + csv_escape(e.mode) + ',' +
           csv_escape(e.dataset) + ',' + csv_escape(e.metric) + ',' + format_number(e.value) +
           '\n';
  }
  return out;
}

// ===== Plot-data CSV shapes =====

inline std::string roc_plot_csv(const RocCurve& curve) {
  std::string out = "threshold,fpr,tpr,log_scale_ok\n";
  for (const auto& p : curve.points) {
    out += format_number(p.threshold) + ',' + format_number(p.fpr) + ',' +
           format_number(p.tpr) + ',' + (p.fpr > 0.0 ? "1" : "0") + '\n';
  }
  return out;
}

inline std::string logit_hist_csv(const ScoreHistogram& h) {
  std::string out = "bin_low,bin_high,positive,negative\n";
  const std::size_t bins = h.positive.size();
  const double width = (h.hi - h.lo) / double(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out += format_number(h.lo + width * double(b)) + ',' +
           format_number(b + 1 == bins ? h.hi : h.lo + width * double(b + 1)) + ',' +
           std::to_string(h.positive[b]) + ',' + std::to_string(h.negative[b]) + '\n';
  }
  return out;
}

inline std::string trajectory_band_csv(const TrajectoryBand& band) {
  std::string out = "position,mean,ci_low,ci_high\n";
  for (std::size_t i = 0; i < band.grid.size(); ++i) {
    out += format_number(band.grid[i]) + ',' + format_number(band.mean[i]) + ',' +
           format_number(band.ci_low[i]) + ',' + format_number(band.ci_high[i]) + '\n';
  }
  return out;
}

/** All eight (label, ThinkOff prediction, ThinkOn prediction) cells. */
inline std::string transition_csv(const TransitionMatrix& m) {
  std::string out = "label,pred_off,pred_on,count\n";
  for (int label = 0; label <= 1; ++label)
    for (int off = 0; off <= 1; ++off)
      for (int on = 0; on <= 1; ++on)
        out += std::to_string(label) + ',' + std::to_string(off) + ',' + std::to_string(on) +
               ',' + std::to_string(m.count(label != 0, off != 0, on != 0)) + '\n';
  return out;
}

}  // namespace lowfpr
