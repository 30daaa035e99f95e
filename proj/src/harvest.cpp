#include "sar/harvest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include "httplib.h"

using nlohmann::json;

namespace sar {

void HarvestConfig::validate() const {
  if (endpoint.empty()) throw std::invalid_argument("harvest: endpoint is required");
  if (num_samples < 1) throw std::invalid_argument("harvest: num_samples must be >= 1");
  if (!(sample_temperature > 0.0)) {
    throw std::invalid_argument("harvest: sample temperature must be > 0");
  }
  if (max_tokens < 1) throw std::invalid_argument("harvest: max_tokens must be >= 1");
  if (concurrency < 1) throw std::invalid_argument("harvest: concurrency must be >= 1");
}

namespace {

// Per-prompt failure that does not poison the rest of the run.
class PromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string base;
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

std::vector<GenerationRecord> parse_choices(const json& reply, GenerationKind kind) {
  auto choices = reply.find("choices");
  if (choices == reply.end() || !choices->is_array() || choices->empty()) {
    throw PromptError("response has no choices");
  }
  const double floor = std::log(1e-12);
  std::vector<GenerationRecord> out;
  for (const auto& choice : *choices) {
    auto lp = choice.find("logprobs");
    if (lp == choice.end() || lp->is_null()) {
      throw EndpointError("endpoint response carries no token logprobs");
    }
    auto tokens = lp->find("tokens");
    auto values = lp->find("token_logprobs");
    if (tokens == lp->end() || values == lp->end() || !tokens->is_array() ||
        !values->is_array()) {
      throw PromptError("logprobs must hold 'tokens' and 'token_logprobs' arrays");
    }
    if (tokens->size() != values->size()) {
      throw PromptError("logprobs arrays differ in length");
    }
    GenerationRecord g;
    g.kind = kind;
    for (std::size_t i = 0; i < tokens->size(); ++i) {
      const json& t = (*tokens)[i];
      const json& v = (*values)[i];
      if (!t.is_string() || !v.is_number()) {
        throw PromptError("malformed token entry at index " + std::to_string(i));
      }
      const double logprob = v.get<double>();
      if (!std::isfinite(logprob) || logprob > 0.0) {
        throw PromptError("token logprob out of range at index " + std::to_string(i));
      }
      g.tokens.push_back({t.get<std::string>(), std::max(logprob, floor)});
    }
    auto text = choice.find("text");
    g.text = text != choice.end() && text->is_string() ? text->get<std::string>()
                                                       : g.surface();
    out.push_back(std::move(g));
  }
  return out;
}

class CompletionClient {
 public:
  explicit CompletionClient(const HarvestConfig& config)
      : config_(config), endpoint_(split_url(config.endpoint)) {}

  std::vector<GenerationRecord> complete(const std::string& prompt, double temperature,
                                         int n, GenerationKind kind) const {
    const json body = {{"prompt", prompt},
                       {"max_tokens", config_.max_tokens},
                       {"temperature", temperature},
                       {"logprobs", true},
                       {"n", n}};
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(config_.backoff * (1 << (attempt - 1)));
      httplib::Client cli(endpoint_.base);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
      const auto usecs =
          std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
      cli.set_connection_timeout(secs.count(), usecs.count());
      cli.set_read_timeout(secs.count(), usecs.count());
      auto res = cli.Post(endpoint_.path, payload, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500 || res->status == 429) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw PromptError("HTTP " + std::to_string(res->status) + ": " + res->body);
      }
      json reply;
      try {
        reply = json::parse(res->body);
      } catch (const json::exception& e) {
        throw PromptError(std::string("response is not JSON: ") + e.what());
      }
      return parse_choices(reply, kind);
    }
    throw PromptError("request failed after " + std::to_string(config_.max_retries + 1) +
                      " attempts: " + last_error);
  }

 private:
  const HarvestConfig& config_;
  Endpoint endpoint_;
};

QuestionRecord harvest_one(const CompletionClient& client, const HarvestConfig& config,
                           const PromptSpec& spec) {
  QuestionRecord q;
  q.id = spec.id;
  q.prompt = spec.prompt;
  q.references = spec.references;

  auto greedy = client.complete(spec.prompt, 0.0, 1, GenerationKind::most_likely);
  q.most_likely = std::move(greedy.front());

  const auto k = static_cast<std::size_t>(config.num_samples);
  // Servers may cap n; keep asking for the remainder.
  for (int round = 0; q.sampled.size() < k; ++round) {
    if (round > config.num_samples) throw PromptError("endpoint returned too few samples");
    auto batch = client.complete(spec.prompt, config.sample_temperature,
                                 static_cast<int>(k - q.sampled.size()),
                                 GenerationKind::sampled);
    for (auto& g : batch) {
      if (q.sampled.size() < k) q.sampled.push_back(std::move(g));
    }
  }
  try {
    validate(q);
  } catch (const DatasetError& e) {
    throw PromptError(e.what());
  }
  return q;
}

}  // namespace

HarvestResult harvest(const HarvestConfig& config, std::span<const PromptSpec> prompts) {
  config.validate();
  const CompletionClient client(config);
  std::vector<std::optional<QuestionRecord>> records(prompts.size());
  std::vector<std::optional<std::string>> errors(prompts.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex fatal_mu;
  std::exception_ptr fatal;

  auto worker = [&] {
    for (std::size_t i = next++; i < prompts.size() && !abort; i = next++) {
      try {
        records[i] = harvest_one(client, config, prompts[i]);
      } catch (const PromptError& e) {
        errors[i] = e.what();
      } catch (...) {
        std::lock_guard lock(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        abort = true;
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(
      static_cast<std::size_t>(config.concurrency), std::max<std::size_t>(prompts.size(), 1));
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& th : threads) th.join();
  if (fatal) std::rethrow_exception(fatal);

  HarvestResult result;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (records[i]) result.records.push_back(std::move(*records[i]));
    if (errors[i]) result.failures.push_back({prompts[i].id, *errors[i]});
  }
  return result;
}

std::vector<PromptSpec> load_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError(0, "cannot open prompts file " + path.string());
  std::vector<PromptSpec> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      PromptSpec spec;
      spec.id = j.at("id").get<std::string>();
      spec.prompt = j.at("prompt").get<std::string>();
      spec.references = j.at("references").get<std::vector<std::string>>();
      if (spec.references.empty()) throw DatasetError(lineno, "references must be non-empty");
      out.push_back(std::move(spec));
    } catch (const json::exception& e) {
      throw DatasetError(lineno, e.what());
    }
  }
  return out;
}

}  // namespace sar
