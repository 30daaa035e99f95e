#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sar/records.hpp"
#include "sar/similarity.hpp"

namespace sar {

struct RelevanceOptions {
  // Separator placed between the prompt and the generation when forming the
  // texts compared for token relevance.
  std::string joiner = " ";
};

struct TokenRelevanceVector {
  std::vector<double> raw;         // 1 - g(x+s, x+s without token i), in [0,1]
  std::vector<double> normalized;  // raw / sum(raw), or 1/N when sum(raw) == 0
  bool uniform_fallback = false;
};

// K x K similarity matrix over generation texts; unit diagonal.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(std::size_t k) : k_(k), values_(k * k, 0.0) {
    for (std::size_t i = 0; i < k; ++i) values_[i * k + i] = 1.0;
  }

  std::size_t size() const { return k_; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * k_ + j]; }

  // Writes both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double v) {
    values_[i * k_ + j] = v;
    values_[j * k_ + i] = v;
  }

 private:
  std::size_t k_ = 0;
  std::vector<double> values_;
};

std::string join_prompt(std::string_view prompt, std::string_view text,
                        std::string_view joiner);

// Surface text of `g` with token `index` spliced out (no re-tokenization).
std::string text_without_token(const GenerationRecord& g, std::size_t index);

double token_relevance(const GenerationRecord& g, std::size_t index,
                       std::string_view prompt, const SimilarityProvider& provider,
                       const RelevanceOptions& options = {});

// All N raw relevances, scored in a single similarity batch.
std::vector<double> raw_token_relevances(const GenerationRecord& g,
                                         std::string_view prompt,
                                         const SimilarityProvider& provider,
                                         const RelevanceOptions& options = {});

TokenRelevanceVector normalize_token_relevance(std::vector<double> raw);

TokenRelevanceVector normalized_token_relevance(const GenerationRecord& g,
                                                std::string_view prompt,
                                                const SimilarityProvider& provider,
                                                const RelevanceOptions& options = {});

SimilarityMatrix pairwise_matrix(std::span<const GenerationRecord> generations,
                                 const SimilarityProvider& provider);

// log R_S(j) = log sum_{k != j} g(j,k) exp(logprobs[k]). Zero-similarity terms
// are skipped; -inf when nothing remains.
double sentence_relevance(std::size_t j, const SimilarityMatrix& matrix,
                          std::span<const double> logprobs);

// Log-domain sentence relevances for every j.
std::vector<double> sentence_relevances(const SimilarityMatrix& matrix,
                                        std::span<const double> logprobs);

}  // namespace sar
