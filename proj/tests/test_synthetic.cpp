#include <cmath>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "lowfpr/metrics.hpp"
#include "lowfpr/synthetic.hpp"

using namespace lowfpr;

namespace {

BackendDescriptor synth_descriptor() {
  BackendDescriptor d;
  d.kind = BackendDescriptor::Kind::Synthetic;
  d.model_name = "synthetic";
  return d;
}

std::string fake_id(int i) { return "ex-" + std::to_string(i); }

}  // namespace

TEST_CASE("synthetic scores are deterministic bit for bit", "[synthetic]") {
  const SyntheticConfig config{42, 2.0, 1.0, 4.0, 16};
  for (int i = 0; i < 50; ++i) {
    const double a = synthetic_score(config, fake_id(i), i % 2 == 0, InferenceMode::ThinkOn);
    const double b = synthetic_score(config, fake_id(i), i % 2 == 0, InferenceMode::ThinkOn);
    CHECK(a == b);
    CHECK(a > 0.0);
    CHECK(a <= 1.0);
  }
  // a different seed moves the draws
  const SyntheticConfig other{43, 2.0, 1.0, 4.0, 16};
  int moved = 0;
  for (int i = 0; i < 50; ++i) {
    if (synthetic_score(config, fake_id(i), true, InferenceMode::ThinkOff) !=
        synthetic_score(other, fake_id(i), true, InferenceMode::ThinkOff))
      ++moved;
  }
  CHECK(moved == 50);
}

TEST_CASE("polarization zero makes the modes identical", "[synthetic]") {
  const SyntheticConfig config{7, 0.0, 1.0, 2.0, 16};
  for (int i = 0; i < 100; ++i) {
    const double off = synthetic_score(config, fake_id(i), i % 2 == 0, InferenceMode::ThinkOff);
    const double on = synthetic_score(config, fake_id(i), i % 2 == 0, InferenceMode::ThinkOn);
    CHECK(on == off);
  }
}

TEST_CASE("think on multiplies the logit by one plus polarization", "[synthetic]") {
  const SyntheticConfig config{11, 3.0, 1.0, 2.0, 16};
  for (int i = 0; i < 100; ++i) {
    const double off = synthetic_logit(config, fake_id(i), false, InferenceMode::ThinkOff);
    const double on = synthetic_logit(config, fake_id(i), false, InferenceMode::ThinkOn);
    CHECK(on == 4.0 * off);
    CHECK(synthetic_score(config, fake_id(i), false, InferenceMode::ThinkOn) ==
          Catch::Approx(1.0 / (1.0 + std::exp(-on))).margin(1e-15));
  }
  // a ThinkOff logit of exactly 1.0 maps to 4.0 under ThinkOn: p = logistic(4)
  CHECK(1.0 / (1.0 + std::exp(-4.0)) == Catch::Approx(0.9820137900379085).epsilon(1e-12));
}

TEST_CASE("negatives sit in a moderate band without polarization", "[synthetic]") {
  const SyntheticConfig config{5, 0.0, 0.4, 0.3, 16};
  int in_band = 0;
  const int n = 400;
  for (int i = 0; i < n; ++i) {
    const double p = synthetic_score(config, fake_id(i), false, InferenceMode::ThinkOff);
    if (p > 0.2 && p < 0.8) ++in_band;
  }
  CHECK(in_band >= int(n * 0.95));
}

TEST_CASE("polarization pushes negatives toward extreme scores", "[synthetic]") {
  const SyntheticConfig config{42, 3.0, 1.0, 4.0, 16};
  int extreme_on = 0, extreme_off = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    if (synthetic_score(config, fake_id(i), false, InferenceMode::ThinkOn) > 0.9) ++extreme_on;
    if (synthetic_score(config, fake_id(i), false, InferenceMode::ThinkOff) > 0.9) ++extreme_off;
  }
  CHECK(extreme_on > extreme_off);
}

TEST_CASE("logit variance under think on is nondecreasing in polarization", "[synthetic]") {
  const int n = 600;
  double prev = -1.0;
  for (double pol : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    const SyntheticConfig config{17, pol, 1.0, 2.0, 16};
    std::vector<double> values;
    for (int i = 0; i < n; ++i) {
      const double p = synthetic_score(config, fake_id(i), i % 2 == 0, InferenceMode::ThinkOn);
      values.push_back(logit_transform(p));
    }
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= n;
    CHECK(var >= prev);
    prev = var;
  }
}

TEST_CASE("the backend reconstructs the score law from marked prefixes", "[synthetic]") {
  const SyntheticConfig config{42, 2.0, 1.0, 4.0, 16};
  SyntheticBackend backend(synth_descriptor(), config);
  const Dataset ds = make_synthetic_dataset(20, 42);

  for (const Example& ex : ds.examples) {
    // ThinkOff shape: fresh JSON object suffix
    const std::string off_prefix = "intro text " + ex.prompt + "{\"classification\": \"";
    const CandidateScores off = backend.score_candidates(off_prefix, {"Unsafe", "Safe"});
    REQUIRE(off.candidates.size() == 2);
    CHECK(off.context_echo == off_prefix);
    CHECK(std::isfinite(off.candidates[0].second));
    CHECK(std::isfinite(off.candidates[1].second));
    const double p_off =
        1.0 / (1.0 + std::exp(off.candidates[1].second - off.candidates[0].second));
    CHECK(p_off == Catch::Approx(synthetic_score(config, ex, InferenceMode::ThinkOff))
                       .margin(1e-12));

    // ThinkOn shape: continuation suffix after generated reasoning
    const std::string on_prefix =
        "intro " + ex.prompt + "{\"reasoning\": \"steps\", \"classification\": \"";
    const CandidateScores on = backend.score_candidates(on_prefix, {"Unsafe", "Safe"});
    const double p_on = 1.0 / (1.0 + std::exp(on.candidates[1].second - on.candidates[0].second));
    CHECK(p_on ==
          Catch::Approx(synthetic_score(config, ex, InferenceMode::ThinkOn)).margin(1e-12));
  }
}

TEST_CASE("unmarked prefixes degrade to a stable pseudo-identity", "[synthetic]") {
  SyntheticBackend backend(synth_descriptor(), SyntheticConfig{1, 0.0, 1.0, 1.0, 16});
  const std::string prefix = "no marker here{\"classification\": \"";
  const CandidateScores a = backend.score_candidates(prefix, {"Unsafe", "Safe"});
  const CandidateScores b = backend.score_candidates(prefix, {"Unsafe", "Safe"});
  CHECK(a.candidates[0].second == b.candidates[0].second);
  CHECK(a.candidates[1].second == b.candidates[1].second);
}

TEST_CASE("candidate label collisions are refused upfront", "[synthetic][backend]") {
  SyntheticBackend backend(synth_descriptor(), SyntheticConfig{});
  CHECK_NOTHROW(backend.score_candidates("x{\"classification\": \"", {"Unsafe", "Safe"}));
  CHECK_NOTHROW(backend.score_candidates("x{\"SCORE\": \"", {"FAIL", "PASS"}));
  CHECK_THROWS_AS(backend.score_candidates("x", {"Safe", "Safeguard"}),
                  CandidateCollisionError);
  CHECK_THROWS_AS(backend.score_candidates("x", {"Yes", "Yellow"}), CandidateCollisionError);
  CHECK_THROWS_AS(backend.score_candidates("x", {"", "Safe"}), CandidateCollisionError);
}

TEST_CASE("synthetic generation is deterministic and respects limits", "[synthetic]") {
  SyntheticBackend backend(synth_descriptor(), SyntheticConfig{9, 0.0, 1.0, 1.0, 24});

  const GenerationResult a = backend.generate("some prompt", {}, 100);
  const GenerationResult b = backend.generate("some prompt", {}, 100);
  CHECK(a.text == b.text);
  REQUIRE(a.tokens.size() == 24);  // reasoning_tokens caps the length

  std::string concat;
  for (const auto& t : a.tokens) concat += t;
  CHECK(concat == a.text);
  CHECK(a.finish_reason == GenerationResult::FinishReason::EndOfText);

  const GenerationResult short_gen = backend.generate("some prompt", {}, 5);
  CHECK(short_gen.tokens.size() == 5);
  CHECK(short_gen.finish_reason == GenerationResult::FinishReason::Length);

  const GenerationResult other = backend.generate("different prompt", {}, 100);
  CHECK(other.text != a.text);
}

TEST_CASE("generation halts at the earliest stop sequence", "[synthetic][backend]") {
  SyntheticBackend backend(synth_descriptor(), SyntheticConfig{9, 0.0, 1.0, 1.0, 24});
  const GenerationResult full = backend.generate("p", {}, 100);
  REQUIRE(full.tokens.size() >= 4);

  // use a mid-text substring as the stop sequence
  const std::string stop = full.tokens[2] + full.tokens[3];
  const GenerationResult cut = backend.generate("p", {stop}, 100);
  CHECK(cut.finish_reason == GenerationResult::FinishReason::StopSequence);
  CHECK(cut.text == full.text.substr(0, full.text.find(stop)));
  CHECK(cut.text.find(stop) == std::string::npos);
  std::string concat;
  for (const auto& t : cut.tokens) concat += t;
  CHECK(concat == cut.text);
}

TEST_CASE("make_synthetic_dataset is balanced and marked", "[synthetic]") {
  const Dataset ds = make_synthetic_dataset(100, 3);
  const ClassCounts counts = class_counts(ds);
  CHECK(counts.positives == 50);
  CHECK(counts.negatives == 50);
  CHECK(ds.examples[0].id == "syn-000000");
  CHECK(ds.examples[0].prompt.find("[syn id=syn-000000 class=negative]") == 0);
  CHECK(ds.examples[1].prompt.find("class=positive") != std::string::npos);

  // same seed, same dataset
  const Dataset again = make_synthetic_dataset(100, 3);
  for (std::size_t i = 0; i < ds.examples.size(); ++i)
    CHECK(ds.examples[i].prompt == again.examples[i].prompt);
}
