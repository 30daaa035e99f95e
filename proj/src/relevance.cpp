#include "sar/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sar/logmath.hpp"

namespace sar {

std::string join_prompt(std::string_view prompt, std::string_view text,
                        std::string_view joiner) {
  std::string out;
  out.reserve(prompt.size() + joiner.size() + text.size());
  out.append(prompt).append(joiner).append(text);
  return out;
}

std::string text_without_token(const GenerationRecord& g, std::size_t index) {
  if (index >= g.tokens.size()) throw std::out_of_range("token index out of range");
  std::string out;
  for (std::size_t i = 0; i < g.tokens.size(); ++i) {
    if (i != index) out += g.tokens[i].text;
  }
  return out;
}

double token_relevance(const GenerationRecord& g, std::size_t index,
                       std::string_view prompt, const SimilarityProvider& provider,
                       const RelevanceOptions& options) {
  const std::string full = join_prompt(prompt, g.surface(), options.joiner);
  const std::string reduced =
      join_prompt(prompt, text_without_token(g, index), options.joiner);
  return std::clamp(1.0 - provider.similarity(full, reduced), 0.0, 1.0);
}

std::vector<double> raw_token_relevances(const GenerationRecord& g,
                                         std::string_view prompt,
                                         const SimilarityProvider& provider,
                                         const RelevanceOptions& options) {
  const std::string full = join_prompt(prompt, g.surface(), options.joiner);
  std::vector<TextPair> pairs;
  pairs.reserve(g.tokens.size());
  for (std::size_t i = 0; i < g.tokens.size(); ++i) {
    pairs.emplace_back(full, join_prompt(prompt, text_without_token(g, i), options.joiner));
  }
  std::vector<double> sims = provider.batch_similarity(pairs);
  for (double& s : sims) s = std::clamp(1.0 - s, 0.0, 1.0);
  return sims;
}

TokenRelevanceVector normalize_token_relevance(std::vector<double> raw) {
  TokenRelevanceVector out;
  double total = 0.0;
  for (double r : raw) total += r;
  out.normalized.resize(raw.size());
  if (total > 0.0) {
    for (std::size_t i = 0; i < raw.size(); ++i) out.normalized[i] = raw[i] / total;
  } else if (!raw.empty()) {
    std::fill(out.normalized.begin(), out.normalized.end(),
              1.0 / static_cast<double>(raw.size()));
    out.uniform_fallback = true;
  }
  out.raw = std::move(raw);
  return out;
}

TokenRelevanceVector normalized_token_relevance(const GenerationRecord& g,
                                                std::string_view prompt,
                                                const SimilarityProvider& provider,
                                                const RelevanceOptions& options) {
  return normalize_token_relevance(raw_token_relevances(g, prompt, provider, options));
}

SimilarityMatrix pairwise_matrix(std::span<const GenerationRecord> generations,
                                 const SimilarityProvider& provider) {
  const std::size_t k = generations.size();
  if (k == 0) throw std::invalid_argument("pairwise_matrix needs K >= 1");
  SimilarityMatrix m(k);
  std::vector<std::string> texts;
  texts.reserve(k);
  for (const auto& g : generations) texts.push_back(g.surface());
  std::vector<TextPair> pairs;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) pairs.emplace_back(texts[i], texts[j]);
  }
  const auto scores = provider.batch_similarity(pairs);
  std::size_t n = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) m.set(i, j, scores[n++]);
  }
  return m;
}

double sentence_relevance(std::size_t j, const SimilarityMatrix& matrix,
                          std::span<const double> logprobs) {
  const std::size_t k = matrix.size();
  if (j >= k) throw std::out_of_range("sentence index out of range");
  if (logprobs.size() != k) {
    throw std::invalid_argument("sentence_relevance: logprobs size != K");
  }
  std::vector<double> terms;
  terms.reserve(k);
  for (std::size_t other = 0; other < k; ++other) {
    if (other == j) continue;
    const double g = matrix(j, other);
    if (g <= 0.0) continue;
    terms.push_back(std::log(g) + logprobs[other]);
  }
  return log_sum_exp(terms);
}

std::vector<double> sentence_relevances(const SimilarityMatrix& matrix,
                                        std::span<const double> logprobs) {
  std::vector<double> out(matrix.size());
  for (std::size_t j = 0; j < matrix.size(); ++j) {
    out[j] = sentence_relevance(j, matrix, logprobs);
  }
  return out;
}

}  // namespace sar
