#pragma once

// Scoring: turns backend outputs into normalized positive-class
// probabilities.
//
// Three extraction paths share one record type:
//   - token / ThinkOff: score the forced JSON prefix directly.
//   - token / ThinkOn: generate reasoning up to the bundle's stop
//     sequences, then score prompt + reasoning + forced suffix.
//   - verbalized: generate the full JSON answer and parse the stated
//     classification and confidence out of it.
//
// Token-based probabilities use two-way normalization over the two
// candidate labels: p = exp(l_pos) / (exp(l_pos) + exp(l_neg)). The pair
// of labels absorbs nearly all next-token mass in practice, and this is
// the only renormalization computable from the two log-probs alone.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

#include "lowfpr/backend.hpp"
#include "lowfpr/error.hpp"
#include "lowfpr/prompts.hpp"
#include "lowfpr/types.hpp"

namespace lowfpr {

inline constexpr std::size_t kDefaultMaxReasoningTokens = 1024;

/** One scored inference. Immutable once emitted. */
struct ScoreRecord {
  std::string example_id;
  InferenceMode mode = InferenceMode::ThinkOff;
  ScoringScheme scheme = ScoringScheme::TokenBased;
  double p_positive = 0.5;
  // (l_pos, l_neg); present iff scheme == TokenBased.
  std::optional<std::pair<double, double>> raw_label_logprobs;
  // Present iff mode == ThinkOn (may be empty text).
  std::optional<std::string> reasoning_text;
  // Present iff scheme == Verbalized and parse_status == Ok.
  std::optional<int> verbalized_confidence;
  ParseStatus parse_status = ParseStatus::Ok;
  // True when the stated confidence needed rounding or clamping into
  // the integer range [0, 100]. parse_status stays Ok in that case.
  bool confidence_repaired = false;
};

/** p_pos over two candidate log-probs; invariant to a shared constant. */
inline double two_way_normalize(double l_pos, double l_neg) {
  return 1.0 / (1.0 + std::exp(l_neg - l_pos));
}

namespace detail {

/** Looks up one label's log-prob in a backend response. */
inline double logprob_for(const CandidateScores& scores, const std::string& label) {
  for (const auto& [cand, lp] : scores.candidates)
    if (cand == label) return lp;
  throw ProtocolError("backend response is missing candidate label '" + label + "'");
}

/** Scores a fully assembled prefix and fills the token-based fields. */
inline void score_prefix_into(Backend& backend, const PromptBundle& bundle,
                              const std::string& prefix, ScoreRecord& rec) {
  const CandidateScores scores = backend.score_candidates(prefix, bundle.candidate_labels);
  const double l_pos = logprob_for(scores, bundle.candidate_labels.first);
  const double l_neg = logprob_for(scores, bundle.candidate_labels.second);
  rec.raw_label_logprobs = {l_pos, l_neg};
  rec.p_positive = two_way_normalize(l_pos, l_neg);
  rec.parse_status = scores.floored ? ParseStatus::FallbackFloor : ParseStatus::Ok;
}

}  // namespace detail

/**
 * Token-based scoring. ThinkOff scores the forced prefix directly;
 * ThinkOn generates reasoning first (halted by the bundle's stop
 * sequences), then scores prompt + reasoning + forced suffix.
 */
inline ScoreRecord token_score(Backend& backend, const std::string& example_id,
                               const PromptBundle& bundle, InferenceMode mode,
                               std::size_t max_reasoning_tokens = kDefaultMaxReasoningTokens) {
  if (bundle.forced_suffix.empty())
    throw ConfigError("token_score requires a token-based bundle (empty forced_suffix)");

  ScoreRecord rec;
  rec.example_id = example_id;
  rec.mode = mode;
  rec.scheme = ScoringScheme::TokenBased;

  const std::string stem = bundle.prompt_text + bundle.generation_prefix;
  if (mode == InferenceMode::ThinkOff) {
    detail::score_prefix_into(backend, bundle, stem + bundle.forced_suffix, rec);
  } else {
    const GenerationResult gen =
        backend.generate(stem, bundle.stop_sequences, max_reasoning_tokens);
    rec.reasoning_text = gen.text;
    detail::score_prefix_into(backend, bundle, stem + gen.text + bundle.forced_suffix, rec);
  }
  return rec;
}

namespace detail {

/** Count of quote characters not preceded by a backslash. */
inline std::size_t unescaped_quote_count(const std::string& s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) ++n;
  return n;
}

/**
 * Extracts the first JSON object from generated text, with one recovery
 * pass that balances quotes and braces. The common case needs recovery
 * by design: the "}" stop sequence eats the closing brace.
 */
inline std::optional<nlohmann::json> parse_object(const std::string& text) {
  const std::size_t open = text.find('{');
  if (open == std::string::npos) return std::nullopt;
  std::string body = text.substr(open);

  const auto try_parse = [](const std::string& s) -> std::optional<nlohmann::json> {
    nlohmann::json parsed = nlohmann::json::parse(s, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded() || !parsed.is_object()) return std::nullopt;
    return parsed;
  };

  if (auto parsed = try_parse(body)) return parsed;

  // Recovery: close a dangling string, then append missing braces.
  if (unescaped_quote_count(body) % 2 == 1) body += '"';
  const auto opens = std::count(body.begin(), body.end(), '{');
  const auto closes = std::count(body.begin(), body.end(), '}');
  for (auto i = closes; i < opens; ++i) body += '}';
  return try_parse(body);
}

inline bool iequals(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  return true;
}

/** Confidence field as a real number; accepts "92", " 92.5 ", or 92. */
inline std::optional<double> confidence_value(const nlohmann::json& field) {
  if (field.is_number()) return field.get<double>();
  if (!field.is_string()) return std::nullopt;
  std::string s = field.get<std::string>();
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return std::nullopt;
  const auto last = s.find_last_not_of(" \t");
  s = s.substr(first, last - first + 1);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace detail

/**
 * Verbalized-confidence scoring. Generates the model's JSON answer and
 * maps the stated confidence onto the positive class. Anything that
 * cannot be parsed after the recovery pass scores 0.5 and is flagged
 * parse_failed_default rather than dropped.
 */
inline ScoreRecord verbalized_score(Backend& backend, const std::string& example_id,
                                    const PromptBundle& bundle,
                                    InferenceMode mode = InferenceMode::ThinkOff,
                                    std::size_t max_tokens = kDefaultMaxReasoningTokens) {
  if (!bundle.forced_suffix.empty())
    throw ConfigError("verbalized_score requires a verbalized bundle");

  ScoreRecord rec;
  rec.example_id = example_id;
  rec.mode = mode;
  rec.scheme = ScoringScheme::Verbalized;
  rec.p_positive = 0.5;
  rec.parse_status = ParseStatus::ParseFailedDefault;

  const GenerationResult gen = backend.generate(
      bundle.prompt_text + bundle.generation_prefix, bundle.stop_sequences, max_tokens);
  if (mode == InferenceMode::ThinkOn) {
    // Preamble before the JSON object (a native thinking block, usually).
    const std::size_t open = gen.text.find('{');
    rec.reasoning_text = open == std::string::npos ? gen.text : gen.text.substr(0, open);
  }

  const std::optional<nlohmann::json> parsed = detail::parse_object(gen.text);
  if (!parsed) return rec;

  const auto label_it = parsed->find(bundle.classification_key);
  const auto conf_it = parsed->find("confidence");
  if (label_it == parsed->end() || conf_it == parsed->end() || !label_it->is_string())
    return rec;

  const std::string label = label_it->get<std::string>();
  bool positive = false;
  if (label == bundle.candidate_labels.first) {
    positive = true;
  } else if (label == bundle.candidate_labels.second) {
    positive = false;
  } else if (detail::iequals(label, bundle.candidate_labels.first)) {
    positive = true;
  } else if (detail::iequals(label, bundle.candidate_labels.second)) {
    positive = false;
  } else {
    return rec;
  }

  const std::optional<double> raw_conf = detail::confidence_value(*conf_it);
  if (!raw_conf || !std::isfinite(*raw_conf)) return rec;

  const long rounded = std::lround(*raw_conf);
  const long clamped = std::clamp(rounded, 0L, 100L);
  rec.confidence_repaired = double(rounded) != *raw_conf || clamped != rounded;
  rec.verbalized_confidence = int(clamped);
  rec.parse_status = ParseStatus::Ok;
  const double conf = double(clamped) / 100.0;
  rec.p_positive = positive ? conf : 1.0 - conf;
  return rec;
}

// ===== JSONL serialization (used by the runner's append-only logs) =====

inline nlohmann::ordered_json record_to_json(const ScoreRecord& rec) {
  nlohmann::ordered_json j;
  j["example_id"] = rec.example_id;
  j["mode"] = to_string(rec.mode);
  j["scheme"] = to_string(rec.scheme);
  j["p_positive"] = rec.p_positive;
  if (rec.raw_label_logprobs) {
    j["l_pos"] = rec.raw_label_logprobs->first;
    j["l_neg"] = rec.raw_label_logprobs->second;
  }
  if (rec.reasoning_text) j["reasoning_text"] = *rec.reasoning_text;
  if (rec.verbalized_confidence) j["verbalized_confidence"] = *rec.verbalized_confidence;
  j["parse_status"] = to_string(rec.parse_status);
  if (rec.confidence_repaired) j["confidence_repaired"] = true;
  return j;
}

inline ScoreRecord record_from_json(const nlohmann::json& j) {
  ScoreRecord rec;
  rec.example_id = j.at("example_id").get<std::string>();
  rec.mode = mode_from_string(j.at("mode").get<std::string>());
  rec.scheme = scheme_from_string(j.at("scheme").get<std::string>());
  rec.p_positive = j.at("p_positive").get<double>();
  if (j.contains("l_pos"))
    rec.raw_label_logprobs = {j.at("l_pos").get<double>(), j.at("l_neg").get<double>()};
  if (j.contains("reasoning_text")) rec.reasoning_text = j.at("reasoning_text").get<std::string>();
  if (j.contains("verbalized_confidence"))
    rec.verbalized_confidence = j.at("verbalized_confidence").get<int>();
  rec.parse_status = parse_status_from_string(j.at("parse_status").get<std::string>());
  rec.confidence_repaired = j.value("confidence_repaired", false);
  return rec;
}

}  // namespace lowfpr
