#pragma once

// HTTP completion backend speaking the de-facto completions wire format:
// request {model, prompt, max_tokens, stop, logprobs, echo, temperature}
// against a single endpoint, response read from choices[0].
//
// Scoring strategy: the primary path asks for the top-k next-token
// log-probabilities after the prefix and matches each candidate label by
// its leading token. A label absent from top-k falls back to one
// echo-scored request (max_tokens 0, echo true) whose token_logprobs are
// summed over the label's span. If neither path yields a value the label
// gets the floor log-probability ln(1e-10) and the result is flagged.
//
// Transport failures, HTTP errors, and unparseable bodies are retried
// with exponential backoff (max_attempts, initial_backoff); response
// schema violations surface immediately as ProtocolError. Temperature is
// fixed to 0 so repeated generation is as reproducible as the server
// allows. Outstanding requests are bounded by max_inflight.

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "lowfpr/backend.hpp"
#include "lowfpr/error.hpp"

namespace lowfpr {

namespace detail {

/** Counting semaphore; std::counting_semaphore needs a compile-time cap. */
class Semaphore {
 public:
  explicit Semaphore(std::size_t count) : count_(count) {}

  void acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [this] { return count_ > 0; });
    --count_;
  }

  void release() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++count_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t count_;
};

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(Semaphore& sem) : sem_(sem) { sem_.acquire(); }
  ~SemaphoreGuard() { sem_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  Semaphore& sem_;
};

/** Splits an endpoint URL into (scheme://host:port, path). */
inline std::pair<std::string, std::string> split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigError("endpoint must look like http://host:port[/path]: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/v1/completions"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

class HttpCompletionBackend final : public Backend {
 public:
  explicit HttpCompletionBackend(BackendDescriptor desc, bool trace_wire = false)
      : desc_(std::move(desc)), trace_(trace_wire), inflight_(desc_.max_inflight) {
    desc_.validate();
    if (desc_.kind != BackendDescriptor::Kind::HttpCompletion)
      throw ConfigError("HttpCompletionBackend requires an HttpCompletion descriptor");
    if (desc_.endpoint.empty()) {
      const char* endpoint = std::getenv("LOWFPR_ENDPOINT");
      if (endpoint != nullptr) desc_.endpoint = endpoint;
    }
    std::tie(base_url_, path_) = detail::split_endpoint(desc_.endpoint);
    if (const char* key = std::getenv("LOWFPR_API_KEY")) api_key_ = key;
  }

  const BackendDescriptor& descriptor() const override { return desc_; }

  GenerationResult generate(const std::string& prompt, const std::vector<std::string>& stop,
                            std::size_t max_tokens) override {
    if (prompt.empty()) throw ConfigError("generate requires a non-empty prompt");
    if (max_tokens < 1) throw ConfigError("generate requires max_tokens >= 1");

    nlohmann::json req = {
        {"model", desc_.model_name},   {"prompt", prompt},
        {"max_tokens", max_tokens},    {"temperature", 0},
        {"logprobs", desc_.top_k_logprobs}, {"echo", false},
    };
    if (!stop.empty()) req["stop"] = stop;

    const nlohmann::json body = post(req);
    const nlohmann::json& choice = first_choice(body);
    if (!choice.contains("text") || !choice.at("text").is_string())
      throw ProtocolError("completion response lacks choices[0].text");

    GenerationResult gen;
    gen.text = choice.at("text").get<std::string>();
    if (choice.contains("logprobs") && choice.at("logprobs").is_object() &&
        choice.at("logprobs").contains("tokens") && choice.at("logprobs").at("tokens").is_array())
      gen.tokens = choice.at("logprobs").at("tokens").get<std::vector<std::string>>();

    // keep the token/text invariant even across tokenizer quirks
    std::string concat;
    for (const auto& t : gen.tokens) concat += t;
    if (concat != gen.text) {
      gen.tokens.clear();
      if (!gen.text.empty()) gen.tokens.push_back(gen.text);
    }

    const std::string finish = choice.value("finish_reason", "");
    if (finish == "length")
      gen.finish_reason = GenerationResult::FinishReason::Length;
    else if (finish == "stop" && !stop.empty())
      gen.finish_reason = GenerationResult::FinishReason::StopSequence;
    else
      gen.finish_reason = GenerationResult::FinishReason::EndOfText;
    // servers differ on whether the stop text is echoed back; cut it here
    detail::apply_stop_sequences(gen, stop);
    return gen;
  }

  CandidateScores score_candidates(const std::string& prefix,
                                   const std::pair<std::string, std::string>& labels) override {
    check_candidate_labels(labels);

    const nlohmann::json req = {
        {"model", desc_.model_name},   {"prompt", prefix},
        {"max_tokens", 1},             {"temperature", 0},
        {"logprobs", desc_.top_k_logprobs}, {"echo", false},
    };
    const nlohmann::json body = post(req);

    CandidateScores out;
    out.context_echo = prefix;
    for (const std::string& label : {labels.first, labels.second}) {
      std::optional<double> lp = top_k_lookup(body, label);
      if (!lp) lp = echo_score(prefix, label);
      if (!lp) {
        lp = kFloorLogProb;
        out.floored = true;
      }
      out.candidates.emplace_back(label, *lp);
    }
    return out;
  }

 private:
  static const nlohmann::json& first_choice(const nlohmann::json& body) {
    if (!body.contains("choices") || !body.at("choices").is_array() ||
        body.at("choices").empty())
      throw ProtocolError("completion response has no choices");
    return body.at("choices").at(0);
  }

  /** Max log-prob among top-k tokens whose stripped text leads `label`. */
  static std::optional<double> top_k_lookup(const nlohmann::json& body,
                                            const std::string& label) {
    const nlohmann::json& choice = first_choice(body);
    if (!choice.contains("logprobs") || !choice.at("logprobs").is_object()) return std::nullopt;
    const nlohmann::json& lp = choice.at("logprobs");
    if (!lp.contains("top_logprobs") || !lp.at("top_logprobs").is_array() ||
        lp.at("top_logprobs").empty())
      return std::nullopt;
    const nlohmann::json& top = lp.at("top_logprobs").at(0);
    if (!top.is_object()) return std::nullopt;

    std::optional<double> best;
    for (const auto& [token, value] : top.items()) {
      if (!value.is_number()) continue;
      const auto start = token.find_first_not_of(" \t\n");
      if (start == std::string::npos) continue;
      const std::string stripped = token.substr(start);
      if (label.rfind(stripped, 0) != 0) continue;
      const double v = value.get<double>();
      if (!best || v > *best) best = v;
    }
    return best;
  }

  /** Echo-scored fallback: sums token_logprobs across the label's span. */
  std::optional<double> echo_score(const std::string& prefix, const std::string& label) {
    const nlohmann::json req = {
        {"model", desc_.model_name},   {"prompt", prefix + label},
        {"max_tokens", 0},             {"temperature", 0},
        {"logprobs", desc_.top_k_logprobs}, {"echo", true},
    };
    nlohmann::json body;
    try {
      body = post(req);
    } catch (const ProtocolError&) {
      return std::nullopt;  // server does not support echo scoring
    }

    const nlohmann::json& choice = first_choice(body);
    if (!choice.contains("logprobs") || !choice.at("logprobs").is_object()) return std::nullopt;
    const nlohmann::json& lp = choice.at("logprobs");
    if (!lp.contains("token_logprobs") || !lp.at("token_logprobs").is_array() ||
        !lp.contains("text_offset") || !lp.at("text_offset").is_array())
      return std::nullopt;
    const nlohmann::json& values = lp.at("token_logprobs");
    const nlohmann::json& offsets = lp.at("text_offset");
    if (values.size() != offsets.size()) return std::nullopt;
    const nlohmann::json* tokens = nullptr;
    if (lp.contains("tokens") && lp.at("tokens").is_array() &&
        lp.at("tokens").size() == values.size())
      tokens = &lp.at("tokens");

    // a token belongs to the label span when any part of it lies past the
    // prefix boundary (BPE tokens often straddle it, e.g. " Un" in " Unsafe")
    double sum = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!offsets.at(i).is_number_integer()) return std::nullopt;
      const std::size_t start = offsets.at(i).get<std::size_t>();
      std::size_t end = start;
      if (tokens && tokens->at(i).is_string())
        end = start + tokens->at(i).get<std::string>().size();
      if (start < prefix.size() && end <= prefix.size()) continue;
      if (!values.at(i).is_number()) return std::nullopt;  // null in the label span
      sum += values.at(i).get<double>();
      any = true;
    }
    if (!any) return std::nullopt;
    return sum;
  }

  /** One bounded, retried, optionally traced POST returning parsed JSON. */
  nlohmann::json post(const nlohmann::json& req) {
    const std::string payload = req.dump();
    enum class Failure { Unreachable, Timeout, Protocol };
    Failure last = Failure::Unreachable;
    std::string last_detail;

    for (int attempt = 1; attempt <= desc_.max_attempts; ++attempt) {
      if (attempt > 1)
        std::this_thread::sleep_for(desc_.initial_backoff * (1 << (attempt - 2)));

      detail::SemaphoreGuard hold(inflight_);
      httplib::Client client(base_url_);
      const auto seconds = static_cast<time_t>(desc_.request_timeout_s);
      const auto usec = static_cast<time_t>((desc_.request_timeout_s - double(seconds)) * 1e6);
      client.set_connection_timeout(seconds, usec);
      client.set_read_timeout(seconds, usec);
      client.set_write_timeout(seconds, usec);

      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
      trace("POST " + path_ + " " + payload);

      const httplib::Result res = client.Post(path_, headers, payload, "application/json");
      if (!res) {
        const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                               res.error() == httplib::Error::Read ||
                               res.error() == httplib::Error::Write;
        last = timed_out ? Failure::Timeout : Failure::Unreachable;
        last_detail = httplib::to_string(res.error());
        continue;
      }
      trace("HTTP " + std::to_string(res->status) + " " + res->body);
      if (res->status != 200) {
        last = res->status == 429 || res->status >= 500 ? Failure::Unreachable
                                                        : Failure::Protocol;
        last_detail = "status " + std::to_string(res->status);
        continue;
      }
      nlohmann::json body =
          nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/false);
      if (body.is_discarded()) {
        last = Failure::Protocol;
        last_detail = "unparseable response body";
        continue;
      }
      return body;
    }

    const std::string what = "backend " + desc_.endpoint + " failed after " +
                             std::to_string(desc_.max_attempts) + " attempts: " + last_detail;
    switch (last) {
      case Failure::Timeout: throw BackendTimeoutError(what);
      case Failure::Protocol: throw ProtocolError(what);
      case Failure::Unreachable: default: throw BackendUnreachableError(what);
    }
  }

  void trace(const std::string& line) const {
    if (!trace_) return;
    std::string redacted = line;
    if (!api_key_.empty()) {
      for (std::size_t pos = redacted.find(api_key_); pos != std::string::npos;
           pos = redacted.find(api_key_, pos))
        redacted.replace(pos, api_key_.size(), "***");
    }
    std::lock_guard<std::mutex> lock(trace_mu_);
    std::cerr << "[wire] " << redacted << "\n";
  }

  BackendDescriptor desc_;
  bool trace_;
  std::string base_url_;
  std::string path_;
  std::string api_key_;
  detail::Semaphore inflight_;
  mutable std::mutex trace_mu_;
};

}  // namespace lowfpr
