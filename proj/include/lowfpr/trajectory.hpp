#pragma once

// Reasoning trajectories: the positive-class probability as a function of
// how many reasoning tokens precede the forced classification prefix.
//
// A trajectory is extracted by slicing the backend's own token stream for
// the captured reasoning (not by re-tokenizing truncated text: slicing is
// cheaper and deterministic) and scoring each prefix exactly the way
// token_score does. Trajectories across false positives aggregate into a
// mean band with a pointwise 95% normal-approximation confidence interval.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lowfpr/backend.hpp"
#include "lowfpr/dataset.hpp"
#include "lowfpr/error.hpp"
#include "lowfpr/scoring.hpp"

namespace lowfpr {

/** One example's probability series over reasoning-prefix lengths. */
struct Trajectory {
  std::string example_id;
  std::vector<std::size_t> prefix_lengths;  // strictly increasing, starts at 0
  std::vector<double> p_positive_series;    // same length, values in [0, 1]
  std::size_t stride = 1;
  // True when a backend failure cut the series short; what was scored
  // before the failure is kept.
  bool truncated = false;
};

/** Pointwise mean and CI over trajectories resampled onto a common grid. */
struct TrajectoryBand {
  std::vector<double> grid;  // normalized positions in [0, 1]
  std::vector<double> mean;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  std::size_t n = 0;
  bool insufficient_data = false;  // n < 2: the CI collapses onto the mean
};

/** Per-token granularity for short reasoning; every 8th token otherwise. */
inline std::size_t default_stride(std::size_t token_count) {
  return token_count < 256 ? 1 : 8;
}

/**
 * Scores prompt + reasoning-prefix + forced_suffix at lengths
 * {0, stride, 2·stride, …, full}. Transport failures after the first
 * point truncate the trajectory instead of losing it.
 */
inline Trajectory extract_trajectory(Backend& backend, const std::string& example_id,
                                     const PromptBundle& bundle,
                                     const std::vector<std::string>& reasoning_tokens,
                                     std::size_t stride) {
  if (stride < 1) throw ConfigError("trajectory stride must be at least 1");
  if (bundle.forced_suffix.empty())
    throw ConfigError("extract_trajectory requires a token-based bundle");

  std::vector<std::size_t> lengths{0};
  for (std::size_t len = stride; len < reasoning_tokens.size(); len += stride)
    lengths.push_back(len);
  if (!reasoning_tokens.empty()) lengths.push_back(reasoning_tokens.size());

  Trajectory traj;
  traj.example_id = example_id;
  traj.stride = stride;

  const std::string stem = bundle.prompt_text + bundle.generation_prefix;
  std::string reasoning_prefix;
  std::size_t consumed = 0;
  for (const std::size_t len : lengths) {
    for (; consumed < len; ++consumed) reasoning_prefix += reasoning_tokens[consumed];
    double p = 0.0;
    try {
      const CandidateScores scores = backend.score_candidates(
          stem + reasoning_prefix + bundle.forced_suffix, bundle.candidate_labels);
      p = two_way_normalize(detail::logprob_for(scores, bundle.candidate_labels.first),
                            detail::logprob_for(scores, bundle.candidate_labels.second));
    } catch (const BackendUnreachableError&) {
      if (traj.p_positive_series.empty()) throw;
      traj.truncated = true;
      break;
    } catch (const BackendTimeoutError&) {
      if (traj.p_positive_series.empty()) throw;
      traj.truncated = true;
      break;
    }
    traj.prefix_lengths.push_back(len);
    traj.p_positive_series.push_back(p);
  }
  return traj;
}

/**
 * Resamples each trajectory by linear interpolation onto `grid_size`
 * equally spaced normalized positions and aggregates pointwise:
 * CI = mean ± 1.96 · std / √n. With fewer than two trajectories the CI
 * is undefined; the band carries the mean with insufficient_data set.
 */
inline TrajectoryBand aggregate_trajectories(const std::vector<Trajectory>& trajectories,
                                             std::size_t grid_size = 50) {
  if (trajectories.empty())
    throw InsufficientDataError("cannot aggregate an empty trajectory list");
  if (grid_size < 2) throw ConfigError("trajectory grid needs at least 2 positions");
  for (const Trajectory& t : trajectories)
    if (t.prefix_lengths.size() < 2)
      throw InsufficientDataError("trajectory " + t.example_id +
                                  " has fewer than 2 points and cannot be resampled");

  TrajectoryBand band;
  band.n = trajectories.size();
  band.insufficient_data = band.n < 2;
  band.grid.resize(grid_size);
  for (std::size_t j = 0; j < grid_size; ++j)
    band.grid[j] = double(j) / double(grid_size - 1);

  // fix the accumulation order so aggregation is exactly
  // permutation-invariant despite floating-point addition
  std::vector<const Trajectory*> ordered;
  ordered.reserve(band.n);
  for (const Trajectory& t : trajectories) ordered.push_back(&t);
  std::sort(ordered.begin(), ordered.end(), [](const Trajectory* a, const Trajectory* b) {
    if (a->example_id != b->example_id) return a->example_id < b->example_id;
    if (a->prefix_lengths != b->prefix_lengths) return a->prefix_lengths < b->prefix_lengths;
    return a->p_positive_series < b->p_positive_series;
  });

  // resample every trajectory onto the shared grid
  std::vector<std::vector<double>> resampled;
  resampled.reserve(band.n);
  for (const Trajectory* tp : ordered) {
    const Trajectory& t = *tp;
    const double full = double(t.prefix_lengths.back());
    std::vector<double> row(grid_size);
    std::size_t seg = 0;
    for (std::size_t j = 0; j < grid_size; ++j) {
      const double x = band.grid[j] * full;
      while (seg + 2 < t.prefix_lengths.size() && double(t.prefix_lengths[seg + 1]) < x) ++seg;
      const double x0 = double(t.prefix_lengths[seg]);
      const double x1 = double(t.prefix_lengths[seg + 1]);
      const double y0 = t.p_positive_series[seg];
      const double y1 = t.p_positive_series[seg + 1];
      row[j] = x >= x1 ? y1 : y0 + (y1 - y0) * (x - x0) / (x1 - x0);
    }
    resampled.push_back(std::move(row));
  }

  band.mean.resize(grid_size);
  band.ci_low.resize(grid_size);
  band.ci_high.resize(grid_size);
  for (std::size_t j = 0; j < grid_size; ++j) {
    // a constant column has exactly that mean and zero spread; skipping the
    // division keeps duplicated trajectories collapsed to a zero-width band
    bool constant = true;
    for (const auto& row : resampled) constant = constant && row[j] == resampled.front()[j];
    if (constant) {
      band.mean[j] = resampled.front()[j];
      band.ci_low[j] = band.mean[j];
      band.ci_high[j] = band.mean[j];
      continue;
    }
    double mean = 0.0;
    for (const auto& row : resampled) mean += row[j];
    mean /= double(band.n);
    band.mean[j] = mean;
    if (band.insufficient_data) {
      band.ci_low[j] = mean;
      band.ci_high[j] = mean;
      continue;
    }
    double var = 0.0;
    for (const auto& row : resampled) var += (row[j] - mean) * (row[j] - mean);
    var /= double(band.n);
    const double half_width = 1.96 * std::sqrt(var) / std::sqrt(double(band.n));
    band.ci_low[j] = mean - half_width;
    band.ci_high[j] = mean + half_width;
  }
  return band;
}

/**
 * Ids of greedy false positives under ThinkOn: negative ground truth with
 * p ≥ 0.5 at full reasoning. Returned in dataset order.
 */
inline std::vector<std::string> false_positive_ids(
    const Dataset& dataset, const std::map<std::string, double>& p_positive_think_on) {
  std::vector<std::string> ids;
  for (const Example& ex : dataset.examples) {
    if (ex.positive) continue;
    const auto it = p_positive_think_on.find(ex.id);
    if (it != p_positive_think_on.end() && it->second >= 0.5) ids.push_back(ex.id);
  }
  return ids;
}

// ===== JSONL serialization (one trajectory per line) =====

inline nlohmann::ordered_json trajectory_to_json(const Trajectory& traj) {
  nlohmann::ordered_json j;
  j["example_id"] = traj.example_id;
  j["prefix_lengths"] = traj.prefix_lengths;
  j["p_positive_series"] = traj.p_positive_series;
  j["stride"] = traj.stride;
  if (traj.truncated) j["truncated"] = true;
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory traj;
  traj.example_id = j.at("example_id").get<std::string>();
  traj.prefix_lengths = j.at("prefix_lengths").get<std::vector<std::size_t>>();
  traj.p_positive_series = j.at("p_positive_series").get<std::vector<double>>();
  traj.stride = j.at("stride").get<std::size_t>();
  traj.truncated = j.value("truncated", false);
  if (traj.prefix_lengths.size() != traj.p_positive_series.size())
    throw MalformedLineError(0, "trajectory series and prefix lengths differ in length");
  return traj;
}

}  // namespace lowfpr
