#pragma once

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sar/records.hpp"
#include "sar/relevance.hpp"
#include "sar/rouge.hpp"
#include "sar/similarity.hpp"

namespace sar {

enum class CorrectnessMetric { rouge_l, sentence_similarity };

std::string_view to_string(CorrectnessMetric m);
CorrectnessMetric parse_metric(std::string_view name);

struct CorrectnessLabel {
  std::string id;
  bool is_correct = false;
  CorrectnessMetric metric = CorrectnessMetric::rouge_l;
  double score = 0.0;  // best over references
  double threshold = 0.5;
};

// Judges the most-likely generation against every reference and keeps the
// best score. `provider` is required for the sentence-similarity metric.
CorrectnessLabel correctness(const QuestionRecord& q, CorrectnessMetric metric,
                             double threshold,
                             const SimilarityProvider* provider = nullptr);

class UndefinedAuroc : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// P(u_correct < u_incorrect) + 0.5 P(u_correct == u_incorrect), via midranks.
// Throws UndefinedAuroc unless both classes are present.
double auroc(std::span<const double> uncertainties, const std::vector<bool>& correct);

// Ascending ranks starting at 1, ties sharing their mean rank.
std::vector<double> midranks(std::span<const double> values);

// Fraction of a sentence's PE contributed by each token; throws on PE == 0.
std::vector<double> token_uncertainty_proportions(const GenerationRecord& g);

// Fraction of the question's total PE contributed by each sentence.
std::vector<double> sentence_uncertainty_proportions(
    std::span<const GenerationRecord> generations);

inline constexpr std::size_t kRelevanceBins = 10;

struct RelevanceBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double up_sum = 0.0;
  double up_mean = 0.0;  // 0 for empty bins
};

// Uniform bins [0,0.1), ..., [0.9,1.0] over relevance with the uncertainty
// proportions of the items falling in each.
struct BinTable {
  std::array<RelevanceBin, kRelevanceBins> bins{};
  std::size_t total = 0;
};

std::size_t relevance_bin(double relevance);
BinTable bin_uncertainty_proportions(std::span<const double> relevances,
                                     std::span<const double> proportions);

struct InequalityOptions {
  RelevanceOptions relevance;
  bool length_normalized_probs = false;
};

struct InequalityResult {
  BinTable token_level;     // raw token relevance vs UP_T
  BinTable sentence_level;  // probability-weighted mean similarity vs UP_S
  std::size_t sentences_skipped = 0;  // PE == 0, proportions undefined
  std::size_t questions_skipped = 0;  // total PE == 0 or K == 1
  std::size_t uniform_fallback_sentences = 0;
};

// Sentence-level relevance used for binning: R_S(j) divided by the total
// probability of the other sentences, i.e. a probability-weighted mean
// similarity in [0,1]. Requires K >= 2.
std::vector<double> sentence_relevance_weighted_mean(const SimilarityMatrix& matrix,
                                                     std::span<const double> logprobs);

InequalityResult inequality_analysis(std::span<const QuestionRecord> dataset,
                                     const SimilarityProvider& provider,
                                     const InequalityOptions& options = {});

std::vector<double> rank_change(std::span<const double> a, std::span<const double> b);

struct RankChangeBucket {
  double lower = 0.0;  // length range [lower, upper)
  double upper = 0.0;
  std::size_t count = 0;
  double mean_change = 0.0;
};

struct RankChangeReport {
  std::vector<double> changes;
  std::vector<RankChangeBucket> buckets;  // non-empty buckets only
  std::optional<double> length_correlation;  // Pearson; empty if undefined
};

RankChangeReport rank_change_report(std::span<const double> a, std::span<const double> b,
                                    std::span<const double> lengths,
                                    std::size_t bucket_width);

}  // namespace sar
