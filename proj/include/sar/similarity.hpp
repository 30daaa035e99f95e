#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace sar {

enum class SimilarityBackend { lexical, precomputed, remote };

using TextPair = std::pair<std::string, std::string>;

// Any failure to obtain a score: transport errors after retries, bad remote
// payloads, or a pair missing from a precomputed table.
class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RemoteOptions {
  std::string url;  // base URL, e.g. http://127.0.0.1:8080
  std::size_t batch_size = 64;
  int max_retries = 3;
  std::chrono::milliseconds backoff{200};
  std::chrono::milliseconds timeout{30000};
};

// Lexical similarity: 1 for identical strings, otherwise Rouge-L F1.
double lexical_similarity(std::string_view a, std::string_view b);

// The semantic similarity g(a, b) in [0,1] behind relevance scoring, the
// pairwise sentence matrix and similarity-based correctness. Scores are
// symmetric for every backend and are memoized under pair_key; the cache is
// safe for concurrent use.
class SimilarityProvider {
 public:
  static SimilarityProvider lexical();
  static SimilarityProvider precomputed(std::map<std::string, double> sims);
  static SimilarityProvider remote(RemoteOptions options);

  SimilarityProvider(SimilarityProvider&&) noexcept;
  SimilarityProvider& operator=(SimilarityProvider&&) noexcept;
  ~SimilarityProvider();

  SimilarityBackend backend() const;

  double similarity(std::string_view a, std::string_view b) const;

  // Elementwise equal to similarity() over `pairs`. Cache hits are served
  // first and the remaining unique pairs are sent in batches. Any failure
  // fails the whole call.
  std::vector<double> batch_similarity(std::span<const TextPair> pairs) const;

  void clear_cache();
  std::size_t cache_size() const;

  // GET /health for the remote backend; {"status":"ok"} locally.
  nlohmann::json health() const;

  struct Impl;

 private:
  explicit SimilarityProvider(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

std::string_view to_string(SimilarityBackend b);
SimilarityBackend parse_backend(std::string_view name);

}  // namespace sar
