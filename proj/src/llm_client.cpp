#include "loccal/llm_client.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "httplib.h"
#include "json.hpp"
#include "loccal/confidence.hpp"

namespace loccal {
namespace {

using nlohmann::json;

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 failed", 1);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

json request_json(const std::string& model, const SampleRequest& r) {
  json body = {{"model", model},
               {"messages", json::array({{{"role", "user"}, {"content", r.prompt}}})},
               {"n", r.n},
               {"temperature", r.temperature},
               {"max_tokens", r.max_tokens}};
  if (r.want_logprobs) body["logprobs"] = true;
  return body;
}

struct Endpoint {
  std::string scheme_host;
  std::string path;
};

Endpoint split_url(const std::string& base_url) {
  const auto scheme = base_url.find("://");
  if (scheme == std::string::npos) throw ConfigError("base_url needs a scheme: " + base_url);
  const auto slash = base_url.find('/', scheme + 3);
  Endpoint e;
  e.scheme_host = base_url.substr(0, slash);
  std::string prefix = slash == std::string::npos ? "" : base_url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  e.path = prefix + "/chat/completions";
  return e;
}

}  // namespace

void validate(const EndpointConfig& c) {
  if (c.base_url.empty()) throw ConfigError("endpoint base_url is empty");
  if (c.model_name.empty()) throw ConfigError("endpoint model_name is empty");
  if (c.max_parallel_requests < 1) throw ConfigError("max_parallel_requests must be >= 1");
  if (c.retry.count < 0) throw ConfigError("retry count must be >= 0");
}

void validate(const SampleRequest& r) {
  if (r.n < 1) throw ConfigError("sample request n must be >= 1");
  if (!(r.temperature >= 0.0)) throw ConfigError("sample temperature must be >= 0");
  if (r.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
}

std::string cache_key(const std::string& model_name, const SampleRequest& r) {
  // nlohmann objects keep keys sorted, so dump() is canonical.
  return sha256_hex(request_json(model_name, r).dump());
}

SampleResponse parse_completion_body(const std::string& body, bool want_logprobs) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw TransportError(std::string("malformed completion body: ") + e.what());
  }
  SampleResponse out;
  try {
    for (const json& choice : j.at("choices")) {
      Completion c;
      const json& content = choice.at("message").at("content");
      if (!content.is_null()) c.text = content.get<std::string>();
      const auto lp = choice.find("logprobs");
      if (lp != choice.end() && !lp->is_null() && lp->contains("content") &&
          !(*lp)["content"].is_null()) {
        std::vector<TokenLogprob> toks;
        for (const json& t : (*lp)["content"])
          toks.push_back({t.at("token").get<std::string>(), t.at("logprob").get<double>()});
        c.logprobs = std::move(toks);
      } else if (want_logprobs) {
        throw CapabilityError("endpoint returned no logprobs although they were requested");
      }
      out.completions.push_back(std::move(c));
    }
    if (const auto u = j.find("usage"); u != j.end() && u->is_object()) {
      out.usage.prompt_tokens = u->value("prompt_tokens", std::int64_t{0});
      out.usage.completion_tokens = u->value("completion_tokens", std::int64_t{0});
    }
  } catch (const json::exception& e) {
    throw TransportError(std::string("unexpected completion body: ") + e.what());
  }
  return out;
}

LlmClient::LlmClient(EndpointConfig config, std::filesystem::path cache_dir, bool offline)
    : config_(std::move(config)), cache_dir_(std::move(cache_dir)), offline_(offline) {
  if (config_.model_name.empty()) throw ConfigError("endpoint model_name is empty");
  if (config_.max_parallel_requests < 1) throw ConfigError("max_parallel_requests must be >= 1");
  if (!offline_) validate(config_);
}

std::size_t LlmClient::network_calls() const {
  std::lock_guard lock(count_mutex_);
  return network_calls_;
}

std::optional<std::string> LlmClient::cache_read(const std::string& key) const {
  if (cache_dir_.empty()) return std::nullopt;
  std::lock_guard lock(cache_mutex_);
  std::ifstream in(cache_dir_ / (key + ".json"), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

void write_entry(const std::filesystem::path& dir, const std::string& key, const std::string& body) {
  std::filesystem::create_directories(dir);
  const auto final_path = dir / (key + ".json");
  const auto tmp = dir / (key + ".json.tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write cache file " + tmp.string());
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
  }
  std::filesystem::rename(tmp, final_path);
}

}  // namespace

void store_cached_response(const std::filesystem::path& cache_dir, const std::string& model_name,
                           const SampleRequest& request, const std::string& body) {
  validate(request);
  write_entry(cache_dir, cache_key(model_name, request), body);
}

void LlmClient::cache_write(const std::string& key, const std::string& body) {
  if (cache_dir_.empty()) return;
  std::lock_guard lock(cache_mutex_);
  write_entry(cache_dir_, key, body);
}

std::string LlmClient::fetch(const SampleRequest& request, const std::string& key) {
  std::string token;
  if (!config_.auth_token_env_var.empty()) {
    const char* v = std::getenv(config_.auth_token_env_var.c_str());
    if (!v || !*v)
      throw ConfigError("auth token variable " + config_.auth_token_env_var + " is not set");
    token = v;
  }
  const Endpoint ep = split_url(config_.base_url);
  const std::string payload = request_json(config_.model_name, request).dump();
  const std::string request_id = key.substr(0, 16);

  httplib::Client client(ep.scheme_host);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers = {{"X-Request-Id", request_id}};
  if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);

  std::string last_error;
  auto backoff = config_.retry.backoff;
  for (int attempt = 0; attempt <= config_.retry.count; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    {
      std::lock_guard lock(count_mutex_);
      ++network_calls_;
    }
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) return res->body;
    last_error = "HTTP " + std::to_string(res->status);
    if (res->status != 429 && res->status < 500) break;
  }
  throw TransportError("request " + request_id + " to " + ep.scheme_host + ep.path + " failed: " +
                       last_error);
}

SampleResponse LlmClient::sample(const SampleRequest& request) {
  validate(request);
  const std::string key = cache_key(config_.model_name, request);
  if (auto cached = cache_read(key)) {
    SampleResponse r = parse_completion_body(*cached, request.want_logprobs);
    r.request_id = key.substr(0, 16);
    r.from_cache = true;
    return r;
  }
  if (offline_)
    throw TransportError("offline mode: no cached response for request " + key.substr(0, 16));
  const std::string body = fetch(request, key);
  SampleResponse r = parse_completion_body(body, request.want_logprobs);
  if (static_cast<int>(r.completions.size()) != request.n)
    throw TransportError("request " + key.substr(0, 16) + ": asked for " +
                         std::to_string(request.n) + " completions, got " +
                         std::to_string(r.completions.size()));
  cache_write(key, body);
  r.request_id = key.substr(0, 16);
  return r;
}

std::vector<SampleResponse> LlmClient::sample_batch(std::span<const SampleRequest> requests) {
  std::vector<SampleResponse> out(requests.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      const std::size_t i = next.fetch_add(1);
      if (i >= requests.size()) return;
      try {
        out[i] = sample(requests[i]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t workers =
      std::min(requests.size(), static_cast<std::size_t>(config_.max_parallel_requests));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

ReflectResponse LlmClient::reflect(const std::string& code, std::span<const std::string> lines,
                                   int max_tokens) {
  const confidence::ReflectivePrompt prompt = confidence::build_reflective_prompt(code, lines);
  SampleRequest req{prompt.text, 1, 0.0, false, max_tokens};
  SampleResponse r = sample(req);
  return {r.completions.at(0).text, r.usage, r.request_id, r.from_cache};
}

}  // namespace loccal
