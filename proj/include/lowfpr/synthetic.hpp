#pragma once

// Deterministic synthetic backend for studying score geometry without a
// model server.
//
// Each example draws one class-conditional logit
//
//   logit = (positive ? +base_separation : -base_separation) + noise_scale * z
//
// where z is a standard normal produced by a fixed, portable recipe:
// splitmix64 mixing of (seed, fnv1a64(example id)) into two (0,1] uniforms,
// then Box-Muller. No library distribution is involved, so the full
// example -> score map is reproducible bit for bit for a given config and is
// independent of call order and thread count.
//
// ThinkOn multiplies the logit by (1 + polarization) before the logistic
// squash. That transform preserves the sign (greedy decisions at 0.5 are
// unchanged) but pushes mass toward 0 and 1; at high polarization many
// scores saturate to exactly 1.0 in double precision, which is what makes
// strict low-FPR operating points collapse while accuracy holds steady.
//
// Synthetic examples carry a marker "[syn id=<id> class=<positive|negative>]"
// inside their prompt text; scoring requests recover the example identity by
// parsing that marker out of the scored prefix, and detect Think On requests
// by the shape of the trailing forced suffix (", ..." continuation vs "{"
// fresh object).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lowfpr/backend.hpp"
#include "lowfpr/dataset.hpp"
#include "lowfpr/error.hpp"
#include "lowfpr/types.hpp"

namespace lowfpr {

// ===== Config =====

struct SyntheticConfig {
  std::uint64_t seed = 0;
  double polarization = 0.0;     // >= 0; ThinkOn logit multiplier is 1 + polarization
  double base_separation = 1.0;  // class-conditional logit means are +/- this
  double noise_scale = 1.0;      // > 0
  std::size_t reasoning_tokens = 16;  // pseudo-reasoning length for generate()

  void validate() const {
    if (polarization < 0.0) throw ConfigError("polarization must be >= 0");
    if (!(noise_scale > 0.0)) throw ConfigError("noise_scale must be > 0");
  }
};

// ===== Fixed-algorithm PRNG =====

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/** Maps a 64-bit hash to a uniform in (0, 1]. */
inline double uniform01(std::uint64_t h) {
  return double((h >> 11) + 1) * 0x1.0p-53;
}

/** Standard normal via Box-Muller on two hash-derived uniforms. */
inline double standard_normal(std::uint64_t seed, std::uint64_t stream) {
  const std::uint64_t base = splitmix64(splitmix64(seed) ^ stream);
  const double u1 = uniform01(splitmix64(base ^ 0x9E3779B97F4A7C15ULL));
  const double u2 = uniform01(splitmix64(base + 0x9E3779B97F4A7C15ULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace detail

// ===== Score law =====

/** Class-conditional logit before the logistic squash. */
inline double synthetic_logit(const SyntheticConfig& config, const std::string& example_id,
                              bool positive, InferenceMode mode) {
  config.validate();
  const double mean = positive ? config.base_separation : -config.base_separation;
  const double z = detail::standard_normal(config.seed, detail::fnv1a64(example_id));
  double logit = mean + config.noise_scale * z;
  if (mode == InferenceMode::ThinkOn) logit *= 1.0 + config.polarization;
  return logit;
}

/** p(positive) in (0, 1]; may round to exactly 1.0 under heavy polarization. */
inline double synthetic_score(const SyntheticConfig& config, const std::string& example_id,
                              bool positive, InferenceMode mode) {
  const double logit = synthetic_logit(config, example_id, positive, mode);
  return 1.0 / (1.0 + std::exp(-logit));
}

inline double synthetic_score(const SyntheticConfig& config, const Example& ex,
                              InferenceMode mode) {
  return synthetic_score(config, ex.id, ex.positive, mode);
}

// ===== Synthetic datasets =====

inline std::string synthetic_marker(const std::string& id, bool positive) {
  return "[syn id=" + id + " class=" + (positive ? "positive" : "negative") + "]";
}

/**
 * Balanced SafetyPrompt dataset of n examples (ids syn-000000..), classes
 * interleaved, each prompt carrying the identity marker plus filler words.
 */
inline Dataset make_synthetic_dataset(std::size_t n, std::uint64_t seed) {
  static const char* kFiller[] = {"river", "lantern", "orchard", "gravel", "whisper",
                                  "copper", "meadow", "harbor",  "timber", "ember"};
  Dataset ds;
  ds.task = TaskKind::SafetyPrompt;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "syn-%06zu", i);
    Example ex;
    ex.task = TaskKind::SafetyPrompt;
    ex.id = buf;
    ex.positive = i % 2 == 1;
    ex.prompt = synthetic_marker(ex.id, ex.positive);
    for (int w = 0; w < 4; ++w) {
      const auto h = detail::splitmix64(detail::splitmix64(seed ^ i) + std::uint64_t(w));
      ex.prompt += std::string(" ") + kFiller[h % 10];
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// ===== Backend =====

class SyntheticBackend final : public Backend {
 public:
  SyntheticBackend(BackendDescriptor descriptor, SyntheticConfig config)
      : descriptor_(std::move(descriptor)), config_(config) {
    descriptor_.kind = BackendDescriptor::Kind::Synthetic;
    descriptor_.validate();
    config_.validate();
  }

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  const SyntheticConfig& config() const { return config_; }

  GenerationResult generate(const std::string& prompt, const std::vector<std::string>& stop,
                            std::size_t max_tokens) override {
    static const char* kWords[] = {"the",    "claim",  "seems",   "consistent", "with",
                                   "stated", "facts",  "because", "every",      "point",
                                   "checks", "against", "given",  "material",   "here"};
    GenerationResult gen;
    const std::size_t n = std::min(config_.reasoning_tokens, max_tokens);
    const std::uint64_t base = detail::splitmix64(config_.seed ^ detail::fnv1a64(prompt));
    for (std::size_t i = 0; i < n; ++i) {
      const auto h = detail::splitmix64(base + i);
      std::string tok = i == 0 ? "" : " ";
      tok += kWords[h % 15];
      gen.text += tok;
      gen.tokens.push_back(std::move(tok));
    }
    gen.finish_reason = n == max_tokens ? GenerationResult::FinishReason::Length
                                        : GenerationResult::FinishReason::EndOfText;
    detail::apply_stop_sequences(gen, stop);
    return gen;
  }

  CandidateScores score_candidates(const std::string& prefix,
                                   const std::pair<std::string, std::string>& labels) override {
    check_candidate_labels(labels);

    std::string id;
    bool positive = false;
    if (!parse_marker(prefix, id, positive)) {
      // Prefix from a non-synthetic dataset: degrade to a stable pseudo-identity.
      char buf[24];
      std::snprintf(buf, sizeof(buf), "anon-%016llx",
                    static_cast<unsigned long long>(detail::fnv1a64(prefix)));
      id = buf;
    }

    const InferenceMode mode =
        continuation_suffixp(prefix) ? InferenceMode::ThinkOn : InferenceMode::ThinkOff;
    const double logit = synthetic_logit(config_, id, positive, mode);

    CandidateScores scores;
    scores.context_echo = prefix;
    scores.candidates.emplace_back(labels.first, -detail::softplus(-logit));
    scores.candidates.emplace_back(labels.second, -detail::softplus(logit));
    return scores;
  }

 private:
  static bool parse_marker(const std::string& prefix, std::string& id, bool& positive) {
    const auto start = prefix.find("[syn id=");
    if (start == std::string::npos) return false;
    const auto id_start = start + 8;
    const auto id_end = prefix.find(' ', id_start);
    if (id_end == std::string::npos) return false;
    const auto cls_start = prefix.find("class=", id_end);
    const auto cls_end = prefix.find(']', id_end);
    if (cls_start == std::string::npos || cls_end == std::string::npos || cls_start > cls_end)
      return false;
    id = prefix.substr(id_start, id_end - id_start);
    positive = prefix.compare(cls_start + 6, cls_end - cls_start - 6, "positive") == 0;
    return true;
  }

  /**
   * True when the prefix ends with a ThinkOn continuation suffix
   * (, "<key>": ") rather than a ThinkOff fresh object ({"<key>": ").
   */
  static bool continuation_suffixp(const std::string& prefix) {
    const std::string opener = "\": \"";
    if (prefix.size() < opener.size() + 3) return false;
    if (prefix.compare(prefix.size() - opener.size(), opener.size(), opener) != 0) return false;
    // scan back over the key characters to its opening quote
    std::size_t i = prefix.size() - opener.size();
    while (i > 0 && (std::isalnum(static_cast<unsigned char>(prefix[i - 1])) ||
                     prefix[i - 1] == '_'))
      --i;
    if (i < 3 || prefix[i - 1] != '"') return false;
    return prefix[i - 2] == ' ' && prefix[i - 3] == ',';
  }

  BackendDescriptor descriptor_;
  SyntheticConfig config_;
};

}  // namespace lowfpr
