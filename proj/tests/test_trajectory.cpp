#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "lowfpr/prompts.hpp"
#include "lowfpr/scoring.hpp"
#include "lowfpr/trajectory.hpp"

using namespace lowfpr;

namespace {

// Fake whose next-token preference for the positive label drifts linearly
// with the number of drift tokens present in the prefix.
class DriftBackend : public Backend {
 public:
  BackendDescriptor desc;
  double slope = 0.35;
  int fail_after = -1;  // score_candidates calls before throwing; -1 = never
  mutable int calls = 0;
  mutable std::vector<std::string> scored_prefixes;

  DriftBackend() {
    desc.kind = BackendDescriptor::Kind::Synthetic;
    desc.model_name = "drift";
  }

  static std::vector<std::string> drift_tokens(std::size_t n) {
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < n; ++i) tokens.push_back(" drift" + std::to_string(i));
    return tokens;
  }

  const BackendDescriptor& descriptor() const override { return desc; }

  GenerationResult generate(const std::string&, const std::vector<std::string>& stop,
                            std::size_t max_tokens) override {
    GenerationResult gen;
    gen.tokens = drift_tokens(std::min<std::size_t>(10, max_tokens));
    for (const auto& t : gen.tokens) gen.text += t;
    detail::apply_stop_sequences(gen, stop);
    return gen;
  }

  CandidateScores score_candidates(const std::string& prefix,
                                   const std::pair<std::string, std::string>& labels) override {
    check_candidate_labels(labels);
    if (fail_after >= 0 && calls >= fail_after) throw BackendTimeoutError("scripted timeout");
    ++calls;
    scored_prefixes.push_back(prefix);
    std::size_t count = 0;
    for (std::size_t pos = prefix.find(" drift"); pos != std::string::npos;
         pos = prefix.find(" drift", pos + 1))
      ++count;
    CandidateScores out;
    out.candidates = {{labels.first, -2.0 + slope * double(count)}, {labels.second, -2.0}};
    out.context_echo = prefix;
    return out;
  }
};

Example sample_example() {
  Example ex;
  ex.id = "sp-1";
  ex.task = TaskKind::SafetyPrompt;
  ex.positive = false;
  ex.prompt = "How do I sharpen a kitchen knife safely?";
  return ex;
}

PromptBundle think_on_bundle() {
  return build_prompt(sample_example(), InferenceMode::ThinkOn, ScoringScheme::TokenBased);
}

Trajectory make_traj(const std::string& id, std::vector<std::size_t> lengths,
                     std::vector<double> series) {
  Trajectory t;
  t.example_id = id;
  t.prefix_lengths = std::move(lengths);
  t.p_positive_series = std::move(series);
  return t;
}

}  // namespace

TEST_CASE("default stride switches at 256 tokens", "[trajectory]") {
  CHECK(default_stride(0) == 1);
  CHECK(default_stride(255) == 1);
  CHECK(default_stride(256) == 8);
  CHECK(default_stride(4096) == 8);
}

TEST_CASE("prefix lengths cover zero to full by stride", "[trajectory]") {
  DriftBackend backend;
  const PromptBundle bundle = think_on_bundle();
  const auto tokens = DriftBackend::drift_tokens(10);

  const Trajectory by3 = extract_trajectory(backend, "sp-1", bundle, tokens, 3);
  CHECK(by3.prefix_lengths == std::vector<std::size_t>{0, 3, 6, 9, 10});
  CHECK(by3.stride == 3);

  const Trajectory by5 = extract_trajectory(backend, "sp-1", bundle, tokens, 5);
  CHECK(by5.prefix_lengths == std::vector<std::size_t>{0, 5, 10});

  // degenerate stride: two points, start and end
  const Trajectory whole = extract_trajectory(backend, "sp-1", bundle, tokens, 10);
  CHECK(whole.prefix_lengths == std::vector<std::size_t>{0, 10});

  const Trajectory fine = extract_trajectory(backend, "sp-1", bundle, tokens, 1);
  CHECK(fine.prefix_lengths.size() == 11);
  CHECK(fine.p_positive_series.size() == 11);
  CHECK_FALSE(fine.truncated);
}

TEST_CASE("empty reasoning reduces to the forced prefix alone", "[trajectory]") {
  DriftBackend backend;
  const PromptBundle bundle = think_on_bundle();
  const Trajectory traj = extract_trajectory(backend, "sp-1", bundle, {}, 1);

  REQUIRE(traj.prefix_lengths == std::vector<std::size_t>{0});
  REQUIRE(backend.scored_prefixes.size() == 1);
  CHECK(backend.scored_prefixes[0] == bundle.prompt_text + bundle.forced_suffix);

  // identical to scoring that prefix directly, think-off style
  const CandidateScores direct =
      backend.score_candidates(bundle.prompt_text + bundle.forced_suffix,
                               bundle.candidate_labels);
  CHECK(traj.p_positive_series[0] ==
        two_way_normalize(direct.candidates[0].second, direct.candidates[1].second));
}

TEST_CASE("a drifting backend yields a strictly increasing trajectory", "[trajectory]") {
  DriftBackend backend;
  const PromptBundle bundle = think_on_bundle();
  const Trajectory traj =
      extract_trajectory(backend, "sp-1", bundle, DriftBackend::drift_tokens(10), 1);

  REQUIRE(traj.p_positive_series.size() == 11);
  for (std::size_t i = 1; i < traj.p_positive_series.size(); ++i)
    CHECK(traj.p_positive_series[i] > traj.p_positive_series[i - 1]);
}

TEST_CASE("full-reasoning trajectory endpoint equals token_score", "[trajectory]") {
  const PromptBundle bundle = think_on_bundle();

  DriftBackend gen_backend;
  const ScoreRecord rec = token_score(gen_backend, "sp-1", bundle, InferenceMode::ThinkOn);

  DriftBackend traj_backend;
  const Trajectory traj =
      extract_trajectory(traj_backend, "sp-1", bundle, DriftBackend::drift_tokens(10), 1);

  CHECK(traj.p_positive_series.back() == rec.p_positive);
}

TEST_CASE("transport failures truncate instead of discarding", "[trajectory]") {
  DriftBackend backend;
  backend.fail_after = 4;
  const PromptBundle bundle = think_on_bundle();
  const Trajectory traj =
      extract_trajectory(backend, "sp-1", bundle, DriftBackend::drift_tokens(10), 1);

  CHECK(traj.truncated);
  CHECK(traj.prefix_lengths == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(traj.p_positive_series.size() == 4);

  // a failure on the very first point propagates
  DriftBackend dead;
  dead.fail_after = 0;
  CHECK_THROWS_AS(
      extract_trajectory(dead, "sp-1", bundle, DriftBackend::drift_tokens(10), 1),
      BackendTimeoutError);
}

TEST_CASE("extraction validates its inputs", "[trajectory]") {
  DriftBackend backend;
  const PromptBundle verbalized =
      build_verbalized_prompt(sample_example(), InferenceMode::ThinkOff);
  CHECK_THROWS_AS(extract_trajectory(backend, "sp-1", verbalized, {}, 1), ConfigError);
  CHECK_THROWS_AS(extract_trajectory(backend, "sp-1", think_on_bundle(), {}, 0), ConfigError);
}

TEST_CASE("identical trajectories collapse the band to zero width", "[trajectory]") {
  const Trajectory one = make_traj("a", {0, 1, 2}, {0.1, 0.5, 0.9});
  const std::vector<Trajectory> five(5, one);
  const TrajectoryBand band = aggregate_trajectories(five, 11);

  REQUIRE(band.n == 5);
  CHECK_FALSE(band.insufficient_data);
  for (std::size_t j = 0; j < band.grid.size(); ++j) {
    CHECK(band.ci_low[j] == band.mean[j]);
    CHECK(band.ci_high[j] == band.mean[j]);
  }
  // endpoints pass through the data
  CHECK(band.mean.front() == 0.1);
  CHECK(band.mean.back() == 0.9);
}

TEST_CASE("two constant trajectories give the closed-form band width", "[trajectory]") {
  const std::vector<Trajectory> pair = {make_traj("a", {0, 4}, {0.2, 0.2}),
                                        make_traj("b", {0, 4}, {0.8, 0.8})};
  const TrajectoryBand band = aggregate_trajectories(pair, 7);
  const double width = 2.0 * 1.96 * 0.3 / std::sqrt(2.0);
  for (std::size_t j = 0; j < band.grid.size(); ++j) {
    CHECK(band.mean[j] == Catch::Approx(0.5).margin(1e-15));
    CHECK(band.ci_high[j] - band.ci_low[j] == Catch::Approx(width).margin(1e-12));
    CHECK(band.ci_low[j] <= band.mean[j]);
    CHECK(band.mean[j] <= band.ci_high[j]);
  }
}

TEST_CASE("resampling matches hand linear interpolation", "[trajectory]") {
  // three knots at normalized 0, 0.5, 1 with values 0.0, 0.4, 1.0
  const std::vector<Trajectory> one = {make_traj("a", {0, 1, 2}, {0.0, 0.4, 1.0})};
  const TrajectoryBand band = aggregate_trajectories(one, 5);

  CHECK(band.insufficient_data);
  REQUIRE(band.grid == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK(band.mean[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK(band.mean[1] == Catch::Approx(0.2).margin(1e-15));
  CHECK(band.mean[2] == Catch::Approx(0.4).margin(1e-15));
  CHECK(band.mean[3] == Catch::Approx(0.7).margin(1e-15));
  CHECK(band.mean[4] == Catch::Approx(1.0).margin(1e-15));
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(band.ci_low[j] == band.mean[j]);
    CHECK(band.ci_high[j] == band.mean[j]);
  }
}

TEST_CASE("aggregation ignores trajectory order", "[trajectory]") {
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Trajectory> trajectories;
  for (int i = 0; i < 12; ++i) {
    std::vector<std::size_t> lengths{0};
    std::vector<double> series{unit(rng)};
    for (std::size_t len = 2; len <= 10; len += 2) {
      lengths.push_back(len);
      series.push_back(unit(rng));
    }
    trajectories.push_back(make_traj("t" + std::to_string(i), lengths, series));
  }
  const TrajectoryBand a = aggregate_trajectories(trajectories, 21);
  std::shuffle(trajectories.begin(), trajectories.end(), rng);
  const TrajectoryBand b = aggregate_trajectories(trajectories, 21);
  CHECK(a.mean == b.mean);
  CHECK(a.ci_low == b.ci_low);
  CHECK(a.ci_high == b.ci_high);
}

TEST_CASE("aggregation guards its preconditions", "[trajectory]") {
  CHECK_THROWS_AS(aggregate_trajectories({}, 10), InsufficientDataError);
  CHECK_THROWS_AS(
      aggregate_trajectories({make_traj("a", {0}, {0.5})}, 10),
      InsufficientDataError);
  CHECK_THROWS_AS(
      aggregate_trajectories({make_traj("a", {0, 1}, {0.5, 0.6})}, 1),
      ConfigError);
}

TEST_CASE("false positives are negatives judged positive under think on", "[trajectory]") {
  Dataset ds;
  ds.task = TaskKind::SafetyPrompt;
  for (int i = 0; i < 6; ++i) {
    Example ex;
    ex.id = "e" + std::to_string(i);
    ex.task = TaskKind::SafetyPrompt;
    ex.positive = i >= 4;  // e4, e5 positive ground truth
    ex.prompt = "p";
    ds.examples.push_back(ex);
  }
  const std::map<std::string, double> p_on = {
      {"e0", 0.9}, {"e1", 0.49}, {"e2", 0.5}, {"e3", 0.1}, {"e4", 0.99}, {"e5", 0.2},
  };
  CHECK(false_positive_ids(ds, p_on) == std::vector<std::string>{"e0", "e2"});
}

TEST_CASE("trajectories round-trip through json", "[trajectory]") {
  Trajectory traj = make_traj("sp-9", {0, 2, 4, 5}, {0.5, 0.25, 0.75, 0.8125});
  traj.stride = 2;
  traj.truncated = true;

  const auto j = trajectory_to_json(traj);
  const Trajectory back = trajectory_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.example_id == traj.example_id);
  CHECK(back.prefix_lengths == traj.prefix_lengths);
  CHECK(back.p_positive_series == traj.p_positive_series);
  CHECK(back.stride == traj.stride);
  CHECK(back.truncated == traj.truncated);
  CHECK(j.dump() == trajectory_to_json(back).dump());

  CHECK_THROWS_AS(trajectory_from_json(nlohmann::json::parse(
                      R"({"example_id":"x","prefix_lengths":[0,1],"p_positive_series":[0.5],"stride":1})")),
                  MalformedLineError);
}
