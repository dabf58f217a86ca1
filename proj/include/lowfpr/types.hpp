#pragma once

#include <optional>
#include <string>
#include <utility>

#include "lowfpr/error.hpp"

namespace lowfpr {

// ===== Task and mode enums =====

enum class TaskKind {
  SafetyPrompt,    // classify a user prompt as Safe / Unsafe
  SafetyResponse,  // classify a model response (given the prompt) as Safe / Unsafe
  Hallucination,   // grade an answer against its context as PASS / FAIL
};

enum class InferenceMode {
  ThinkOff,  // direct classification, no reasoning tokens
  ThinkOn,   // reasoning generated before the classification
};

enum class ScoringScheme {
  TokenBased,  // probability from label-token logits under a forced prefix
  Verbalized,  // probability from a self-reported confidence value
};

enum class ParseStatus {
  Ok,
  FallbackFloor,        // a label logit was missing and floored at kFloorLogProb
  ParseFailedDefault,   // verbalized output unparseable; defaulted to p = 0.5
};

// ===== Label vocabulary =====
//
// The positive class is the one the low-FPR operating point guards
// against: "Unsafe" for safety tasks, "FAIL" for hallucination grading.

inline const char* positive_label(TaskKind task) {
  return task == TaskKind::Hallucination ? "FAIL" : "Unsafe";
}

inline const char* negative_label(TaskKind task) {
  return task == TaskKind::Hallucination ? "PASS" : "Safe";
}

/** JSON key under which the model is asked to emit its classification. */
inline const char* classification_key(TaskKind task) {
  return task == TaskKind::Hallucination ? "SCORE" : "classification";
}

// ===== Model family =====

/**
 * Distinguishes standard instruction-tuned models from reasoning-native
 * models that emit an explicit thinking block. For reasoning-native models
 * ThinkOff is enforced by pre-filling an empty thinking block
 * (open tag immediately followed by close tag) so generation starts after it.
 */
struct ModelFamily {
  enum class Kind { Standard, ReasoningNative };

  Kind kind = Kind::Standard;
  std::string thinking_open_tag;   // e.g. "<think>"
  std::string thinking_close_tag;  // e.g. "</think>"

  static ModelFamily standard() { return ModelFamily{}; }

  static ModelFamily reasoning_native(std::string open_tag, std::string close_tag) {
    ModelFamily f;
    f.kind = Kind::ReasoningNative;
    f.thinking_open_tag = std::move(open_tag);
    f.thinking_close_tag = std::move(close_tag);
    return f;
  }

  bool reasoning_nativep() const { return kind == Kind::ReasoningNative; }
};

// ===== Certainty level =====

/**
 * Optional certainty requirement injected into safety prompts
 * ("only call it unsafe if at least N% certain"). Base means no injection.
 */
struct CertaintyLevel {
  std::optional<int> percent;  // engaged: 60..99

  static CertaintyLevel base() { return CertaintyLevel{}; }

  static CertaintyLevel at(int percent) {
    if (percent < 60 || percent > 99)
      throw UnsupportedCombinationError("certainty percent must be in [60, 99], got " +
                                        std::to_string(percent));
    return CertaintyLevel{percent};
  }

  bool basep() const { return !percent.has_value(); }
};

// ===== String round-trips (wire / file spellings) =====

inline std::string to_string(TaskKind t) {
  switch (t) {
    case TaskKind::SafetyPrompt: return "safety_prompt";
    case TaskKind::SafetyResponse: return "safety_response";
    case TaskKind::Hallucination: return "hallucination";
  }
  return "safety_prompt";
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "safety_prompt") return TaskKind::SafetyPrompt;
  if (s == "safety_response") return TaskKind::SafetyResponse;
  if (s == "hallucination") return TaskKind::Hallucination;
  throw ConfigError("unknown task \"" + s + "\"");
}

inline std::string to_string(InferenceMode m) {
  return m == InferenceMode::ThinkOn ? "think_on" : "think_off";
}

inline InferenceMode mode_from_string(const std::string& s) {
  if (s == "think_on") return InferenceMode::ThinkOn;
  if (s == "think_off") return InferenceMode::ThinkOff;
  throw ConfigError("unknown inference mode \"" + s + "\"");
}

/** Human-facing spelling used in report tables. */
inline const char* display_name(InferenceMode m) {
  return m == InferenceMode::ThinkOn ? "Think On" : "Think Off";
}

inline std::string to_string(ScoringScheme s) {
  return s == ScoringScheme::TokenBased ? "token" : "verbalized";
}

inline ScoringScheme scheme_from_string(const std::string& s) {
  if (s == "token") return ScoringScheme::TokenBased;
  if (s == "verbalized") return ScoringScheme::Verbalized;
  throw ConfigError("unknown scoring scheme \"" + s + "\"");
}

inline std::string to_string(ParseStatus p) {
  switch (p) {
    case ParseStatus::Ok: return "ok";
    case ParseStatus::FallbackFloor: return "fallback_floor";
    case ParseStatus::ParseFailedDefault: return "parse_failed_default";
  }
  return "ok";
}

inline ParseStatus parse_status_from_string(const std::string& s) {
  if (s == "ok") return ParseStatus::Ok;
  if (s == "fallback_floor") return ParseStatus::FallbackFloor;
  if (s == "parse_failed_default") return ParseStatus::ParseFailedDefault;
  throw ConfigError("unknown parse status \"" + s + "\"");
}

inline std::string to_string(const CertaintyLevel& c) {
  return c.basep() ? "base" : std::to_string(*c.percent);
}

inline CertaintyLevel certainty_from_string(const std::string& s) {
  if (s == "base") return CertaintyLevel::base();
  try {
    return CertaintyLevel::at(std::stoi(s));
  } catch (const UnsupportedCombinationError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("unknown certainty level \"" + s + "\"");
  }
}

}  // namespace lowfpr
