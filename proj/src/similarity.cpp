#include "sar/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <shared_mutex>
#include <thread>
#include <unordered_map>

#include "httplib.h"
#include "sar/records.hpp"
#include "sar/rouge.hpp"

using nlohmann::json;

namespace sar {

double lexical_similarity(std::string_view a, std::string_view b) {
  if (a == b) return 1.0;
  return rouge_l(a, b).f1;
}

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// A scorer sees canonically ordered, de-duplicated pairs.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<double> score(std::span<const TextPair> pairs) = 0;
  virtual json health() { return {{"status", "ok"}}; }
};

class LexicalScorer final : public Scorer {
 public:
  std::vector<double> score(std::span<const TextPair> pairs) override {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& [a, b] : pairs) out.push_back(lexical_similarity(a, b));
    return out;
  }
};

class PrecomputedScorer final : public Scorer {
 public:
  explicit PrecomputedScorer(std::map<std::string, double> sims)
      : sims_(std::move(sims)) {
    for (const auto& [k, v] : sims_) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ProviderError("precomputed similarity for key " + k +
                            " is outside [0,1]");
      }
    }
  }

  std::vector<double> score(std::span<const TextPair> pairs) override {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& [a, b] : pairs) {
      auto it = sims_.find(pair_key(a, b));
      if (it != sims_.end()) {
        out.push_back(it->second);
      } else if (a == b) {
        out.push_back(1.0);
      } else {
        throw ProviderError("no precomputed similarity for pair (\"" + a +
                            "\", \"" + b + "\")");
      }
    }
    return out;
  }

 private:
  std::map<std::string, double> sims_;
};

class RemoteScorer final : public Scorer {
 public:
  explicit RemoteScorer(RemoteOptions options) : options_(std::move(options)) {
    if (options_.url.empty()) throw ProviderError("remote backend needs a URL");
    if (options_.batch_size == 0) throw ProviderError("batch size must be >= 1");
    std::string url = options_.url;
    while (!url.empty() && url.back() == '/') url.pop_back();
    const auto scheme = url.find("://");
    const auto slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
      base_ = url.substr(0, slash);
      prefix_ = url.substr(slash);
    } else {
      base_ = url;
    }
  }

  std::vector<double> score(std::span<const TextPair> pairs) override {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (std::size_t start = 0; start < pairs.size(); start += options_.batch_size) {
      const auto chunk = pairs.subspan(
          start, std::min(options_.batch_size, pairs.size() - start));
      auto scores = post_batch(chunk);
      out.insert(out.end(), scores.begin(), scores.end());
    }
    return out;
  }

  json health() override {
    auto res = with_retries([&](httplib::Client& cli) {
      return cli.Get(prefix_ + "/health");
    });
    try {
      return json::parse(res.body);
    } catch (const json::exception& e) {
      throw ProviderError(std::string("malformed /health response: ") + e.what());
    }
  }

 private:
  template <typename Call>
  httplib::Response with_retries(Call&& call) {
    std::string last_error;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(options_.backoff * (1 << (attempt - 1)));
      }
      httplib::Client cli(base_);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(
          options_.timeout - secs);
      cli.set_connection_timeout(secs.count(), usecs.count());
      cli.set_read_timeout(secs.count(), usecs.count());
      cli.set_write_timeout(secs.count(), usecs.count());
      auto res = call(cli);
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw ProviderError("similarity service returned HTTP " +
                            std::to_string(res->status) + ": " + res->body);
      }
      return *res;
    }
    throw ProviderError("similarity service at " + options_.url + " failed after " +
                        std::to_string(options_.max_retries + 1) +
                        " attempts: " + last_error);
  }

  std::vector<double> post_batch(std::span<const TextPair> pairs) {
    json body = {{"pairs", json::array()}};
    for (const auto& [a, b] : pairs) body["pairs"].push_back({a, b});
    const std::string payload = body.dump();
    auto res = with_retries([&](httplib::Client& cli) {
      return cli.Post(prefix_ + "/similarity", payload, "application/json");
    });
    json reply;
    try {
      reply = json::parse(res.body);
    } catch (const json::exception& e) {
      throw ProviderError(std::string("malformed /similarity response: ") + e.what());
    }
    auto it = reply.find("scores");
    if (it == reply.end() || !it->is_array() || it->size() != pairs.size()) {
      throw ProviderError("/similarity response must carry " +
                          std::to_string(pairs.size()) + " scores");
    }
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& s : *it) {
      if (!s.is_number() || !std::isfinite(s.get<double>())) {
        throw ProviderError("/similarity returned a non-numeric score");
      }
      out.push_back(clamp01(s.get<double>()));
    }
    return out;
  }

  RemoteOptions options_;
  std::string base_;
  std::string prefix_;
};

}  // namespace

struct SimilarityProvider::Impl {
  SimilarityBackend backend;
  std::unique_ptr<Scorer> scorer;
  bool use_cache = true;
  mutable std::shared_mutex mu;
  mutable std::unordered_map<std::string, double> cache;
};

SimilarityProvider::SimilarityProvider(std::unique_ptr<Impl> impl)
    : impl_(std::move(impl)) {}
SimilarityProvider::SimilarityProvider(SimilarityProvider&&) noexcept = default;
SimilarityProvider& SimilarityProvider::operator=(SimilarityProvider&&) noexcept =
    default;
SimilarityProvider::~SimilarityProvider() = default;

SimilarityProvider SimilarityProvider::lexical() {
  auto impl = std::make_unique<Impl>();
  impl->backend = SimilarityBackend::lexical;
  impl->scorer = std::make_unique<LexicalScorer>();
  return SimilarityProvider(std::move(impl));
}

SimilarityProvider SimilarityProvider::precomputed(std::map<std::string, double> sims) {
  auto impl = std::make_unique<Impl>();
  impl->backend = SimilarityBackend::precomputed;
  impl->scorer = std::make_unique<PrecomputedScorer>(std::move(sims));
  // The table already is a cache.
  impl->use_cache = false;
  return SimilarityProvider(std::move(impl));
}

SimilarityProvider SimilarityProvider::remote(RemoteOptions options) {
  auto impl = std::make_unique<Impl>();
  impl->backend = SimilarityBackend::remote;
  impl->scorer = std::make_unique<RemoteScorer>(std::move(options));
  return SimilarityProvider(std::move(impl));
}

SimilarityBackend SimilarityProvider::backend() const { return impl_->backend; }

double SimilarityProvider::similarity(std::string_view a, std::string_view b) const {
  const TextPair pair{std::string(a), std::string(b)};
  return batch_similarity(std::span(&pair, 1)).front();
}

std::vector<double> SimilarityProvider::batch_similarity(
    std::span<const TextPair> pairs) const {
  std::vector<double> out(pairs.size());
  if (pairs.empty()) return out;

  std::vector<std::string> keys;
  keys.reserve(pairs.size());
  for (const auto& [a, b] : pairs) keys.push_back(pair_key(a, b));

  // Unique misses, in first-seen order, with a canonical text order.
  std::vector<TextPair> todo;
  std::unordered_map<std::string, std::size_t> todo_index;
  std::vector<std::size_t> slot(pairs.size(), 0);
  std::vector<bool> hit(pairs.size(), false);
  {
    std::shared_lock lock(impl_->mu);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (impl_->use_cache) {
        if (auto it = impl_->cache.find(keys[i]); it != impl_->cache.end()) {
          out[i] = it->second;
          hit[i] = true;
          continue;
        }
      }
      auto [it, inserted] = todo_index.emplace(keys[i], todo.size());
      if (inserted) {
        const auto& [a, b] = pairs[i];
        todo.push_back(a <= b ? TextPair{a, b} : TextPair{b, a});
      }
      slot[i] = it->second;
    }
  }
  if (todo.empty()) return out;

  std::vector<double> scores = impl_->scorer->score(todo);
  for (double& s : scores) s = clamp01(s);

  if (impl_->use_cache) {
    std::unique_lock lock(impl_->mu);
    for (const auto& [key, idx] : todo_index) impl_->cache[key] = scores[idx];
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!hit[i]) out[i] = scores[slot[i]];
  }
  return out;
}

void SimilarityProvider::clear_cache() {
  std::unique_lock lock(impl_->mu);
  impl_->cache.clear();
}

std::size_t SimilarityProvider::cache_size() const {
  std::shared_lock lock(impl_->mu);
  return impl_->cache.size();
}

json SimilarityProvider::health() const { return impl_->scorer->health(); }

std::string_view to_string(SimilarityBackend b) {
  switch (b) {
    case SimilarityBackend::lexical: return "lexical";
    case SimilarityBackend::precomputed: return "precomputed";
    case SimilarityBackend::remote: return "remote";
  }
  return "unknown";
}

SimilarityBackend parse_backend(std::string_view name) {
  if (name == "lexical") return SimilarityBackend::lexical;
  if (name == "precomputed") return SimilarityBackend::precomputed;
  if (name == "remote") return SimilarityBackend::remote;
  throw std::invalid_argument("unknown similarity provider: " + std::string(name));
}

}  // namespace sar
