#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sar/records.hpp"
#include "sar/relevance.hpp"
#include "sar/similarity.hpp"

namespace sar {

struct EstimatorConfig {
  // Scale of the sentence-level shift; smaller t means a larger boost.
  double t = 1e-3;
  // Similarity at or above which two generations share a semantic cluster.
  double cluster_threshold = 0.9;
  // Use exp(-LN-PE) instead of the raw sentence probability wherever a
  // sentence probability enters (sentence relevance, sentSAR, SE).
  bool length_normalized_probs = false;

  void validate() const;
};

enum class Method { pe, ln_pe, lexsim, se, token_sar, sent_sar, sar };

inline constexpr std::array<Method, 7> kAllMethods = {
    Method::pe,       Method::ln_pe,    Method::lexsim, Method::se,
    Method::token_sar, Method::sent_sar, Method::sar};

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

// Per-question estimator values; higher means more uncertain for every
// method. Unrequested methods stay empty.
struct UncertaintyReport {
  std::string id;
  std::array<std::optional<double>, kAllMethods.size()> values{};

  std::optional<double>& operator[](Method m) { return values[static_cast<std::size_t>(m)]; }
  const std::optional<double>& operator[](Method m) const {
    return values[static_cast<std::size_t>(m)];
  }
};

// Predictive entropy: -log p(s|x).
double pe(const GenerationRecord& g);
// PE / N.
double ln_pe(const GenerationRecord& g);

// Negated mean off-diagonal lexical similarity; 0 for a single text.
double lexical_similarity_score(std::span<const std::string> texts);

// Connected components of the graph with an edge wherever g >= threshold,
// each sorted, ordered by smallest member.
std::vector<std::vector<std::size_t>> cluster_generations(const SimilarityMatrix& matrix,
                                                          double threshold);

// -(1/|C|) sum_c log sum_{k in c} p(s_k|x).
double semantic_entropy(std::span<const std::vector<std::size_t>> clusters,
                        std::span<const double> logprobs);

double token_sar(const GenerationRecord& g, const TokenRelevanceVector& relevance);

// Sentence log-probabilities, raw or length-normalized (-LN-PE).
std::vector<double> sequence_logprobs(std::span<const GenerationRecord> generations,
                                      bool length_normalized);

// (1/K) sum_j -log(p_j + R_S(j)/t), evaluated as
// -logaddexp(logprobs[j], logR_S(j) - log t).
double sent_sar(const SimilarityMatrix& matrix, std::span<const double> logprobs,
                double t);

// sent_sar over token-shifted probabilities p'(s) = exp(-tokenSAR(s)).
double sar(const SimilarityMatrix& matrix, std::span<const double> token_sar_values,
           double t);
double sar(std::span<const GenerationRecord> generations, const SimilarityMatrix& matrix,
           std::span<const TokenRelevanceVector> relevances, double t);

struct ScoreOptions {
  EstimatorConfig estimator;
  RelevanceOptions relevance;
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
};

// Runs the requested estimators over the sampled generations of `q`.
UncertaintyReport score_question(const QuestionRecord& q,
                                 const SimilarityProvider& provider,
                                 const ScoreOptions& options);

}  // namespace sar
