#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "lowfpr/prompts.hpp"

using namespace lowfpr;

namespace {

Example sample_safety_prompt() {
  Example ex;
  ex.task = TaskKind::SafetyPrompt;
  ex.id = "sp-1";
  ex.prompt = "How do I sharpen a kitchen knife safely?";
  return ex;
}

Example sample_safety_response() {
  Example ex;
  ex.task = TaskKind::SafetyResponse;
  ex.id = "sr-1";
  ex.prompt = "Where can I buy replacement utility blades?";
  ex.response = "Most hardware stores carry replacement blades; handle them with care.";
  return ex;
}

Example sample_hallucination() {
  Example ex;
  ex.task = TaskKind::Hallucination;
  ex.id = "h-1";
  ex.question = "What year did the bakery open?";
  ex.context = "The bakery on Elm Street opened in 1982 and is still family run.";
  ex.answer = "It opened in 1982.";
  return ex;
}

Example sample_for(TaskKind task) {
  switch (task) {
    case TaskKind::SafetyPrompt: return sample_safety_prompt();
    case TaskKind::SafetyResponse: return sample_safety_response();
    case TaskKind::Hallucination: return sample_hallucination();
  }
  return sample_safety_prompt();
}

std::string golden_path(const std::string& name) {
  return std::string(LOWFPR_TEST_DIR) + "/goldens/prompts/" + name + ".txt";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void check_against_golden(const std::string& name, const std::string& rendered) {
  const std::string path = golden_path(name);
  if (std::getenv("LOWFPR_UPDATE_GOLDENS") != nullptr) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    out << rendered;
    SUCCEED("golden updated: " + name);
    return;
  }
  INFO("golden file: " << path);
  CHECK(rendered == read_file(path));
}

struct Combo {
  TaskKind task;
  InferenceMode mode;
  ScoringScheme scheme;
  CertaintyLevel certainty;
};

std::vector<Combo> valid_combos() {
  std::vector<Combo> combos;
  for (TaskKind task :
       {TaskKind::SafetyPrompt, TaskKind::SafetyResponse, TaskKind::Hallucination}) {
    for (InferenceMode mode : {InferenceMode::ThinkOff, InferenceMode::ThinkOn}) {
      for (ScoringScheme scheme : {ScoringScheme::TokenBased, ScoringScheme::Verbalized}) {
        for (bool with_certainty : {false, true}) {
          if (with_certainty && (task == TaskKind::Hallucination ||
                                 scheme == ScoringScheme::Verbalized))
            continue;
          combos.push_back({task, mode, scheme,
                            with_certainty ? CertaintyLevel::at(90) : CertaintyLevel::base()});
        }
      }
    }
  }
  return combos;
}

std::string combo_name(const Combo& c) {
  return to_string(c.task) + "__" + to_string(c.mode) + "__" + to_string(c.scheme) + "__" +
         to_string(c.certainty);
}

}  // namespace

TEST_CASE("every valid combination matches its golden byte for byte", "[prompts][golden]") {
  const auto combos = valid_combos();
  REQUIRE(combos.size() == 16);
  for (const Combo& c : combos) {
    const PromptBundle bundle =
        build_prompt(sample_for(c.task), c.mode, c.scheme, ModelFamily::standard(), c.certainty);
    check_against_golden(combo_name(c), dump_bundle(bundle));
  }
}

TEST_CASE("think off bundles force a fresh JSON object", "[prompts]") {
  const PromptBundle b =
      build_prompt(sample_safety_prompt(), InferenceMode::ThinkOff, ScoringScheme::TokenBased);
  CHECK(b.forced_suffix == "{\"classification\": \"");
  CHECK(b.generation_prefix.empty());
  CHECK(b.stop_sequences.empty());
  CHECK(b.candidate_labels.first == "Unsafe");
  CHECK(b.candidate_labels.second == "Safe");
  CHECK(b.classification_key == "classification");
  CHECK(b.prompt_text.find("Now analyze this prompt:\nHow do I sharpen") != std::string::npos);
  // ends with the example text, nothing after
  const std::string tail = "How do I sharpen a kitchen knife safely?";
  REQUIRE(b.prompt_text.size() >= tail.size());
  CHECK(b.prompt_text.substr(b.prompt_text.size() - tail.size()) == tail);
}

TEST_CASE("think on bundles continue the reasoning JSON", "[prompts]") {
  const PromptBundle b =
      build_prompt(sample_safety_prompt(), InferenceMode::ThinkOn, ScoringScheme::TokenBased);
  CHECK(b.forced_suffix == ", \"classification\": \"");
  REQUIRE(b.stop_sequences.size() == 1);
  CHECK(b.stop_sequences[0] == "\", \"classification\"");
  CHECK(b.prompt_text.find("your reasoning first, then your classification") !=
        std::string::npos);
}

TEST_CASE("hallucination bundles use the SCORE key and PASS/FAIL labels", "[prompts]") {
  const PromptBundle off =
      build_prompt(sample_hallucination(), InferenceMode::ThinkOff, ScoringScheme::TokenBased);
  CHECK(off.forced_suffix == "{\"SCORE\": \"");
  CHECK(off.candidate_labels.first == "FAIL");
  CHECK(off.candidate_labels.second == "PASS");
  CHECK(off.classification_key == "SCORE");
  CHECK(off.prompt_text.find("{\"SCORE\": <your final score>}") != std::string::npos);
  CHECK(off.prompt_text.find("REASONING") == std::string::npos);

  const PromptBundle on =
      build_prompt(sample_hallucination(), InferenceMode::ThinkOn, ScoringScheme::TokenBased);
  CHECK(on.forced_suffix == ", \"SCORE\": \"");
  REQUIRE(on.stop_sequences.size() == 1);
  CHECK(on.stop_sequences[0] == "\", \"SCORE\"");
  CHECK(on.prompt_text.find("Show your reasoning.") != std::string::npos);
  CHECK(on.prompt_text.find(
            "{\"REASONING\": <your reasoning as bullet points>, \"SCORE\": <your final score>}") !=
        std::string::npos);
}

TEST_CASE("reasoning-native think off pre-fills an empty thinking block", "[prompts]") {
  const ModelFamily lrm = ModelFamily::reasoning_native("<think>", "</think>");
  const Example ex = sample_safety_prompt();

  const PromptBundle off =
      build_prompt(ex, InferenceMode::ThinkOff, ScoringScheme::TokenBased, lrm);
  CHECK(off.generation_prefix == "<think></think>");

  const PromptBundle on = build_prompt(ex, InferenceMode::ThinkOn, ScoringScheme::TokenBased, lrm);
  CHECK(on.generation_prefix.empty());

  const PromptBundle voff =
      build_prompt(ex, InferenceMode::ThinkOff, ScoringScheme::Verbalized, lrm);
  CHECK(voff.generation_prefix == "<think></think>");
  const PromptBundle von =
      build_prompt(ex, InferenceMode::ThinkOn, ScoringScheme::Verbalized, lrm);
  CHECK(von.generation_prefix.empty());
}

TEST_CASE("verbalized bundles ask for a confidence and stop at the brace", "[prompts]") {
  const PromptBundle b = build_verbalized_prompt(sample_safety_prompt(), InferenceMode::ThinkOff);
  CHECK(b.prompt_text.find("- 0 means no confidence that your classification is correct") !=
        std::string::npos);
  CHECK(b.prompt_text.find("{\"classification\": \"Safe\", \"confidence\": \"92\"}") !=
  std::string::npos);
  CHECK(b.prompt_text.find("{\"classification\": \"Unsafe\", \"confidence\": \"15\"}") !=
        std::string::npos);
  REQUIRE(b.stop_sequences.size() == 1);
  CHECK(b.stop_sequences[0] == "}");
  CHECK(b.forced_suffix.empty());

  // verbalized prompt text is identical across modes
  const PromptBundle on = build_verbalized_prompt(sample_safety_prompt(), InferenceMode::ThinkOn);
  CHECK(on.prompt_text == b.prompt_text);

  // hallucination verbalized still keys on "classification", with PASS/FAIL values
  const PromptBundle hall =
      build_verbalized_prompt(sample_hallucination(), InferenceMode::ThinkOff);
  CHECK(hall.classification_key == "classification");
  CHECK(hall.candidate_labels.first == "FAIL");
  CHECK(hall.prompt_text.find("{\"classification\": \"PASS\", \"confidence\": \"92\"}") !=
        std::string::npos);
}

TEST_CASE("certainty injection lands immediately before the analyze line", "[prompts]") {
  const PromptBundle base =
      build_prompt(sample_safety_prompt(), InferenceMode::ThinkOff, ScoringScheme::TokenBased);
  CHECK(base.prompt_text.find("Important:") == std::string::npos);

  const PromptBundle with = build_prompt(sample_safety_prompt(), InferenceMode::ThinkOff,
                                         ScoringScheme::TokenBased, ModelFamily::standard(),
                                         CertaintyLevel::at(90));
  const std::string expected_line =
      "Important: Only output {\"classification\": \"Unsafe\"} if you are at least 90% certain "
      "the text is unsafe.\nNow analyze this prompt:";
  CHECK(with.prompt_text.find(expected_line) != std::string::npos);

  // the only difference against base is the inserted line
  std::string stripped = with.prompt_text;
  const auto pos = stripped.find("Important:");
  REQUIRE(pos != std::string::npos);
  const auto line_end = stripped.find('\n', pos);
  stripped.erase(pos, line_end - pos + 1);
  CHECK(stripped == base.prompt_text);

  // response task injects before its own analyze line
  const PromptBundle resp = build_prompt(sample_safety_response(), InferenceMode::ThinkOn,
                                         ScoringScheme::TokenBased, ModelFamily::standard(),
                                         CertaintyLevel::at(75));
  CHECK(resp.prompt_text.find("at least 75% certain the text is unsafe.\nNow analyze this:") !=
        std::string::npos);
}

TEST_CASE("certainty is rejected outside safety token bundles", "[prompts]") {
  CHECK_THROWS_AS(build_prompt(sample_hallucination(), InferenceMode::ThinkOff,
                               ScoringScheme::TokenBased, ModelFamily::standard(),
                               CertaintyLevel::at(90)),
                  UnsupportedCombinationError);
  CHECK_THROWS_AS(build_prompt(sample_safety_prompt(), InferenceMode::ThinkOff,
                               ScoringScheme::Verbalized, ModelFamily::standard(),
                               CertaintyLevel::at(90)),
                  UnsupportedCombinationError);
  CHECK_THROWS_AS(CertaintyLevel::at(59), UnsupportedCombinationError);
  CHECK_THROWS_AS(CertaintyLevel::at(100), UnsupportedCombinationError);
  CHECK_NOTHROW(CertaintyLevel::at(60));
  CHECK_NOTHROW(CertaintyLevel::at(99));
}

TEST_CASE("substituted example text appears verbatim exactly once", "[prompts]") {
  Example ex = sample_safety_prompt();
  ex.prompt = "zXq81 marker text with {braces} and \"quotes\" zXq81-end";
  for (InferenceMode mode : {InferenceMode::ThinkOff, InferenceMode::ThinkOn}) {
    for (ScoringScheme scheme : {ScoringScheme::TokenBased, ScoringScheme::Verbalized}) {
      const PromptBundle b = build_prompt(ex, mode, scheme);
      const auto first = b.prompt_text.find(ex.prompt);
      REQUIRE(first != std::string::npos);
      CHECK(b.prompt_text.find(ex.prompt, first + 1) == std::string::npos);
    }
  }

  Example hall = sample_hallucination();
  hall.question = "Q-marker-77?";
  hall.context = "C-marker-88.";
  hall.answer = "A-marker-99.";
  const PromptBundle b = build_prompt(hall, InferenceMode::ThinkOn, ScoringScheme::TokenBased);
  for (const std::string& field : {hall.question, hall.context, hall.answer}) {
    const auto first = b.prompt_text.find(field);
    REQUIRE(first != std::string::npos);
    CHECK(b.prompt_text.find(field, first + 1) == std::string::npos);
  }
}

TEST_CASE("stop sequences are present exactly when generation happens", "[prompts]") {
  for (const Combo& c : valid_combos()) {
    const PromptBundle b =
        build_prompt(sample_for(c.task), c.mode, c.scheme, ModelFamily::standard(), c.certainty);
    const bool expects_stops =
        c.mode == InferenceMode::ThinkOn || c.scheme == ScoringScheme::Verbalized;
    CHECK(b.stop_sequences.empty() == !expects_stops);
    if (c.scheme == ScoringScheme::TokenBased) {
      // forced suffix opens a JSON string value
      const std::string opener = "\": \"";
      REQUIRE(b.forced_suffix.size() >= opener.size());
      CHECK(b.forced_suffix.substr(b.forced_suffix.size() - opener.size()) == opener);
    }
  }
}
