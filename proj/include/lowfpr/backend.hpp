#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lowfpr/error.hpp"

namespace lowfpr {

// ===== Descriptor =====

struct BackendDescriptor {
  enum class Kind { HttpCompletion, Synthetic };

  Kind kind = Kind::Synthetic;
  std::string endpoint;    // HttpCompletion only
  std::string model_name;  // forwarded in requests and folded into cache keys
  double request_timeout_s = 30.0;
  std::size_t max_inflight = 4;     // >= 1, enforced with a semaphore
  std::size_t top_k_logprobs = 20;  // >= 2 so both labels can surface

  // Retry policy: attempts with exponential backoff, doubling per attempt.
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};

  void validate() const {
    if (max_inflight < 1) throw ConfigError("max_inflight must be >= 1");
    if (top_k_logprobs < 2) throw ConfigError("top_k_logprobs must be >= 2");
    if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
    if (request_timeout_s <= 0.0) throw ConfigError("request_timeout_s must be positive");
  }
};

// ===== Results =====

struct GenerationResult {
  enum class FinishReason { StopSequence, Length, EndOfText };

  std::string text;
  std::vector<std::string> tokens;  // concatenation always equals text
  FinishReason finish_reason = FinishReason::EndOfText;
};

inline const char* to_string(GenerationResult::FinishReason r) {
  switch (r) {
    case GenerationResult::FinishReason::StopSequence: return "stop_sequence";
    case GenerationResult::FinishReason::Length: return "length";
    case GenerationResult::FinishReason::EndOfText: return "end_of_text";
  }
  return "end_of_text";
}

/** Substituted when a candidate's log-probability cannot be extracted. */
inline const double kFloorLogProb = std::log(1e-10);

struct CandidateScores {
  std::vector<std::pair<std::string, double>> candidates;  // (label, log-prob), finite
  std::string context_echo;                                // equals the scored prefix
  bool floored = false;  // true when any entry fell back to kFloorLogProb
};

// ===== Interface =====

class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  /** Completes from `prompt`, halting at the earliest stop sequence. */
  virtual GenerationResult generate(const std::string& prompt,
                                    const std::vector<std::string>& stop,
                                    std::size_t max_tokens) = 0;

  /** Log-probabilities for each candidate label as the next token after `prefix`. */
  virtual CandidateScores score_candidates(const std::string& prefix,
                                           const std::pair<std::string, std::string>& labels) = 0;
};

// ===== Shared helpers =====

/**
 * First-token disambiguation probe. Labels whose first characters coincide
 * (or where one label is a prefix of the other) could map onto the same
 * leading token, making the two logits indistinguishable; refuse upfront.
 */
inline void check_candidate_labels(const std::pair<std::string, std::string>& labels) {
  const auto& [a, b] = labels;
  if (a.empty() || b.empty())
    throw CandidateCollisionError("candidate labels must be non-empty");
  if (a.front() == b.front() || a.rfind(b, 0) == 0 || b.rfind(a, 0) == 0)
    throw CandidateCollisionError("candidate labels \"" + a + "\" / \"" + b +
                                  "\" do not have distinct leading tokens");
}

namespace detail {

/**
 * Truncates `text` at the earliest occurrence of any stop sequence and trims
 * the token list to match, so concat(tokens) == text stays true.
 * Returns true when a stop fired.
 */
inline bool apply_stop_sequences(GenerationResult& gen, const std::vector<std::string>& stop) {
  std::size_t cut = std::string::npos;
  for (const auto& s : stop) {
    if (s.empty()) continue;
    const auto pos = gen.text.find(s);
    if (pos != std::string::npos && pos < cut) cut = pos;
  }
  if (cut == std::string::npos) return false;

  gen.text.resize(cut);
  std::vector<std::string> kept;
  std::size_t consumed = 0;
  for (auto& tok : gen.tokens) {
    if (consumed + tok.size() <= cut) {
      consumed += tok.size();
      kept.push_back(std::move(tok));
    } else {
      if (consumed < cut) kept.push_back(tok.substr(0, cut - consumed));
      break;
    }
  }
  gen.tokens = std::move(kept);
  gen.finish_reason = GenerationResult::FinishReason::StopSequence;
  return true;
}

}  // namespace detail

}  // namespace lowfpr
