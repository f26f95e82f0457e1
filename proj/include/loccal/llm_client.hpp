#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loccal/error.hpp"

namespace loccal {

// The endpoint cannot do what the request needs (e.g. no logprobs).
class CapabilityError : public ConfigError {
 public:
  explicit CapabilityError(const std::string& what) : ConfigError(what) {}
};

struct RetryPolicy {
  int count = 3;
  std::chrono::milliseconds backoff{500};  // doubled after each attempt
};

struct EndpointConfig {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string model_name;
  std::string auth_token_env_var = "OPENAI_API_KEY";
  int max_parallel_requests = 4;
  std::chrono::milliseconds timeout{120000};
  RetryPolicy retry;
};

struct SampleRequest {
  std::string prompt;
  int n = 1;
  double temperature = 0.0;
  bool want_logprobs = false;
  int max_tokens = 4096;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;

  friend bool operator==(const TokenLogprob&, const TokenLogprob&) = default;
};

struct Completion {
  std::string text;
  std::optional<std::vector<TokenLogprob>> logprobs;

  friend bool operator==(const Completion&, const Completion&) = default;
};

struct Usage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct SampleResponse {
  std::vector<Completion> completions;
  Usage usage;
  std::string request_id;
  bool from_cache = false;
};

struct ReflectResponse {
  std::string text;
  Usage usage;
  std::string request_id;
  bool from_cache = false;
};

void validate(const EndpointConfig& c);
void validate(const SampleRequest& r);

// Content hash of (model, request); names the cache file.
std::string cache_key(const std::string& model_name, const SampleRequest& r);

// Record/replay client. Every response is stored under cache_dir, one file
// per cache key; offline mode turns cache misses into TransportError.
class LlmClient {
 public:
  LlmClient(EndpointConfig config, std::filesystem::path cache_dir, bool offline);

  SampleResponse sample(const SampleRequest& request);
  // Runs requests with at most max_parallel_requests in flight. Results keep
  // the input order; the first failure is rethrown after all workers stop.
  std::vector<SampleResponse> sample_batch(std::span<const SampleRequest> requests);

  // Sends the reflective prompt for `code` split into `lines` at temperature
  // zero and returns the raw reply.
  ReflectResponse reflect(const std::string& code, std::span<const std::string> lines,
                          int max_tokens = 4096);

  const EndpointConfig& config() const { return config_; }
  std::size_t network_calls() const;

 private:
  std::string fetch(const SampleRequest& request, const std::string& key);
  std::optional<std::string> cache_read(const std::string& key) const;
  void cache_write(const std::string& key, const std::string& body);

  EndpointConfig config_;
  std::filesystem::path cache_dir_;
  bool offline_;
  mutable std::mutex cache_mutex_;
  mutable std::mutex count_mutex_;
  std::size_t network_calls_ = 0;
};

// Stores `body` as the cached response to (model_name, request), as a
// recorded live call would.
void store_cached_response(const std::filesystem::path& cache_dir, const std::string& model_name,
                           const SampleRequest& request, const std::string& body);

// Parses a chat-completions response body.
SampleResponse parse_completion_body(const std::string& body, bool want_logprobs);

}  // namespace loccal
